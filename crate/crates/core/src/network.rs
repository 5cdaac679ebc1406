//! Layer-list networks over a shared [`ParamStore`].
//!
//! A [`NetworkGraph`] is a DAG of layers in execution order. Each layer
//! names its inputs by index, so one description drives the differentiable
//! forward pass, the FLOPs accountant and receptive-field bounds.

use std::fmt;
use std::rc::Rc;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::csconv::ClassMap;
use crate::error::{config_err, shape_err, Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Input,
    Conv {
        weight: ParamId,
        bias: Option<ParamId>,
        groups: usize,
        kernel: usize,
    },
    CsConv {
        weight: ParamId,
        bias: Option<ParamId>,
        num_classes: usize,
        kernel: usize,
    },
    Relu,
    PRelu {
        alpha: ParamId,
    },
    Add,
    Concat,
    AvgDown,
    BilinearUp,
}

impl LayerOp {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerOp::Input => "input",
            LayerOp::Conv { .. } => "conv",
            LayerOp::CsConv { .. } => "csconv",
            LayerOp::Relu => "relu",
            LayerOp::PRelu { .. } => "prelu",
            LayerOp::Add => "add",
            LayerOp::Concat => "concat",
            LayerOp::AvgDown => "avgdown",
            LayerOp::BilinearUp => "upsample",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub op: LayerOp,
    pub inputs: Vec<usize>,
    /// Output channel count.
    pub channels: usize,
    /// Number of 2x downsamplings between the network input and this layer.
    pub scale: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    layers: Vec<Layer>,
    params: ParamStore,
}

/// Handle to a layer while building.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node(pub usize);

impl NetworkGraph {
    /// A network whose only layer is a `channels`-channel input.
    pub fn new(channels: usize) -> (Self, Node) {
        let net = NetworkGraph {
            layers: vec![Layer {
                name: "input".into(),
                op: LayerOp::Input,
                inputs: vec![],
                channels,
                scale: 0,
            }],
            params: ParamStore::new(),
        };
        (net, Node(0))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }
    pub fn params(&self) -> &ParamStore {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
    pub fn output(&self) -> Node {
        Node(self.layers.len() - 1)
    }
    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn find(&self, name: &str) -> Option<Node> {
        self.layers.iter().position(|l| l.name == name).map(Node)
    }

    pub fn has_csconv(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.op, LayerOp::CsConv { .. }))
    }

    /// Class count of the CSConv layers, if any.
    pub fn num_classes(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l.op {
            LayerOp::CsConv { num_classes, .. } => Some(num_classes),
            _ => None,
        })
    }

    fn push(&mut self, name: String, op: LayerOp, inputs: Vec<usize>, channels: usize, scale: u32) -> Node {
        self.layers.push(Layer {
            name,
            op,
            inputs,
            channels,
            scale,
        });
        Node(self.layers.len() - 1)
    }

    fn layer(&self, n: Node) -> &Layer {
        &self.layers[n.0]
    }

    /// Uniform draw in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`.
    fn kaiming(rng: &mut impl Rng, count: usize, fan_in: usize) -> Vec<f64> {
        let bound = (6.0 / fan_in as f64).sqrt();
        (0..count).map(|_| rng.random_range(-bound..=bound)).collect()
    }

    pub fn conv(&mut self, name: &str, src: Node, c_out: usize, kernel: usize, groups: usize, rng: &mut impl Rng) -> Node {
        let l = self.layer(src);
        let (c_in, scale) = (l.channels, l.scale);
        assert!(c_in % groups == 0 && c_out.is_multiple_of(groups), "{name}: groups {groups} must divide {c_in} -> {c_out}");
        let cin_g = c_in / groups;
        let fan_in = cin_g * kernel * kernel;
        let w = Self::kaiming(rng, c_out * fan_in, fan_in);
        let weight = self.params.register(
            format!("{name}.weight"),
            Tensor::from_vec(Shape::new(c_out, cin_g, kernel, kernel), w).expect("conv shape"),
        );
        let bias = self
            .params
            .register(format!("{name}.bias"), Tensor::zeros(Shape::new(1, c_out, 1, 1)));
        let op = LayerOp::Conv {
            weight,
            bias: Some(bias),
            groups,
            kernel,
        };
        self.push(name.into(), op, vec![src.0], c_out, scale)
    }

    /// A class-specific convolution whose `num_classes` stacks all start
    /// from one draw, consuming the generator exactly like [`Self::conv`].
    pub fn csconv(&mut self, name: &str, src: Node, c_out: usize, kernel: usize, num_classes: usize, rng: &mut impl Rng) -> Node {
        let l = self.layer(src);
        let (c_in, scale) = (l.channels, l.scale);
        let fan_in = c_in * kernel * kernel;
        let w = Self::kaiming(rng, c_out * fan_in, fan_in).repeat(num_classes);
        let weight = self.params.register(
            format!("{name}.bank"),
            Tensor::from_vec(Shape::new(num_classes * c_out, c_in, kernel, kernel), w).expect("bank shape"),
        );
        let bias = self.params.register(
            format!("{name}.bank_bias"),
            Tensor::zeros(Shape::new(1, num_classes * c_out, 1, 1)),
        );
        let op = LayerOp::CsConv {
            weight,
            bias: Some(bias),
            num_classes,
            kernel,
        };
        self.push(name.into(), op, vec![src.0], c_out, scale)
    }

    pub fn relu(&mut self, name: &str, src: Node) -> Node {
        let l = self.layer(src);
        let (c, s) = (l.channels, l.scale);
        self.push(name.into(), LayerOp::Relu, vec![src.0], c, s)
    }

    /// Per-channel PReLU with slopes starting at 0.25.
    pub fn prelu(&mut self, name: &str, src: Node) -> Node {
        let l = self.layer(src);
        let (c, s) = (l.channels, l.scale);
        let alpha = self
            .params
            .register(format!("{name}.alpha"), Tensor::full(Shape::new(1, c, 1, 1), 0.25));
        self.push(name.into(), LayerOp::PRelu { alpha }, vec![src.0], c, s)
    }

    pub fn add(&mut self, name: &str, a: Node, b: Node) -> Node {
        let (la, lb) = (self.layer(a), self.layer(b));
        assert!(la.channels == lb.channels && la.scale == lb.scale, "{name}: add operands differ");
        let (c, s) = (la.channels, la.scale);
        self.push(name.into(), LayerOp::Add, vec![a.0, b.0], c, s)
    }

    pub fn concat(&mut self, name: &str, parts: &[Node]) -> Node {
        let s = self.layer(parts[0]).scale;
        assert!(parts.iter().all(|p| self.layer(*p).scale == s), "{name}: concat across scales");
        let c = parts.iter().map(|p| self.layer(*p).channels).sum();
        self.push(name.into(), LayerOp::Concat, parts.iter().map(|p| p.0).collect(), c, s)
    }

    pub fn avg_down(&mut self, name: &str, src: Node) -> Node {
        let l = self.layer(src);
        let (c, s) = (l.channels, l.scale);
        self.push(name.into(), LayerOp::AvgDown, vec![src.0], c, s + 1)
    }

    pub fn upsample(&mut self, name: &str, src: Node) -> Node {
        let l = self.layer(src);
        let (c, s) = (l.channels, l.scale);
        assert!(s > 0, "{name}: upsampling above input resolution");
        self.push(name.into(), LayerOp::BilinearUp, vec![src.0], c, s - 1)
    }

    /// Builds the forward pass on `g`. With `train` false, parameters enter
    /// as constants and no backward state is recorded.
    pub fn forward(&self, g: &mut Graph, input: Var, classes: Option<Rc<ClassMap>>, train: bool) -> Result<Var> {
        self.forward_ablated(g, input, classes, train, &[])
    }

    /// As [`Self::forward`], with the outputs of the `zeroed` layers replaced
    /// by zeros.
    pub fn forward_ablated(
        &self,
        g: &mut Graph,
        input: Var,
        classes: Option<Rc<ClassMap>>,
        train: bool,
        zeroed: &[Node],
    ) -> Result<Var> {
        let in_shape = g.shape(input);
        if in_shape.c() != self.layers[0].channels {
            return shape_err(format!(
                "network expects {} input channels, got {in_shape}",
                self.layers[0].channels
            ));
        }
        let param = |g: &mut Graph, id: ParamId| {
            if train {
                g.param(&self.params, id)
            } else {
                g.constant(self.params.get(id).clone())
            }
        };
        let mut vars: Vec<Var> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = |k: usize| vars[layer.inputs[k]];
            let v = match &layer.op {
                LayerOp::Input => input,
                LayerOp::Conv {
                    weight, bias, groups, ..
                } => {
                    let w = param(g, *weight);
                    let b = bias.map(|b| param(g, b));
                    g.conv2d(x(0), w, b, *groups)?
                }
                LayerOp::CsConv {
                    weight,
                    bias,
                    num_classes,
                    ..
                } => {
                    let Some(classes) = classes.clone() else {
                        return Err(Error::Contract(format!("layer {} needs a class map", layer.name)));
                    };
                    let w = param(g, *weight);
                    let b = bias.map(|b| param(g, b));
                    g.csconv(x(0), classes, w, b, *num_classes)?
                }
                LayerOp::Relu => g.relu(x(0)),
                LayerOp::PRelu { alpha } => {
                    let a = param(g, *alpha);
                    g.prelu(x(0), a)?
                }
                LayerOp::Add => g.add(x(0), x(1))?,
                LayerOp::Concat => {
                    let parts: Vec<Var> = layer.inputs.iter().map(|&k| vars[k]).collect();
                    g.concat_channels(&parts)?
                }
                LayerOp::AvgDown => g.avg_downsample2x(x(0))?,
                LayerOp::BilinearUp => g.bilinear_upsample2x(x(0)),
            };
            let v = if zeroed.contains(&Node(i)) {
                g.constant(Tensor::zeros(g.shape(v)))
            } else {
                v
            };
            vars.push(v);
        }
        Ok(*vars.last().expect("input layer"))
    }

    /// Inference on a plain tensor.
    pub fn infer(&self, input: &Tensor, classes: Option<&ClassMap>) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let out = self.forward(&mut g, x, classes.map(|c| Rc::new(c.clone())), false)?;
        Ok(g.tensor(out).clone())
    }

    /// FLOPs per pixel of network input resolution.
    pub fn count_flops(&self) -> FlopsReport {
        let entries = self
            .layers
            .iter()
            .filter(|l| !matches!(l.op, LayerOp::Input))
            .map(|l| {
                let at_scale = match &l.op {
                    LayerOp::Conv { groups, kernel, .. } => {
                        let c_in = self.layers[l.inputs[0]].channels;
                        2.0 * (kernel * kernel) as f64 * (c_in / groups) as f64 * l.channels as f64
                    }
                    LayerOp::CsConv { kernel, .. } => {
                        let c_in = self.layers[l.inputs[0]].channels;
                        2.0 * (kernel * kernel) as f64 * c_in as f64 * l.channels as f64
                    }
                    LayerOp::Concat | LayerOp::Input => 0.0,
                    _ => l.channels as f64,
                };
                LayerFlops {
                    name: l.name.clone(),
                    kind: l.op.kind(),
                    flops: at_scale / 4f64.powi(l.scale as i32),
                }
            })
            .collect();
        FlopsReport { entries }
    }

    /// Upper bound, in input pixels, on how far an input change can reach.
    pub fn receptive_radius(&self) -> usize {
        let mut radius = vec![0usize; self.layers.len()];
        for (i, l) in self.layers.iter().enumerate() {
            let from = l.inputs.iter().map(|&k| radius[k]).max().unwrap_or(0);
            let own = match &l.op {
                LayerOp::Conv { kernel, .. } | LayerOp::CsConv { kernel, .. } => (kernel / 2) << l.scale,
                LayerOp::AvgDown => 1 << (l.scale - 1),
                LayerOp::BilinearUp => 1 << (l.scale + 1),
                _ => 0,
            };
            radius[i] = from + own;
        }
        radius[self.layers.len() - 1]
    }

    /// Layer name and parameter shapes, for architecture comparisons.
    pub fn signature(&self) -> Vec<(String, Shape)> {
        self.params.iter().map(|(id, p)| (p.name.clone(), self.params.shape_of(id))).collect()
    }

    /// Overwrites every parameter with `values`, in registration order.
    pub fn load_values(&mut self, values: Vec<Vec<f64>>) -> Result<()> {
        if values.len() != self.params.len() {
            return config_err(format!("{} parameter arrays for {} parameters", values.len(), self.params.len()));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.tensor.numel() != v.len() {
                return shape_err(format!("parameter {} holds {} values, got {}", p.name, p.tensor.numel(), v.len()));
            }
            p.tensor.values_mut().copy_from_slice(&v);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFlops {
    pub name: String,
    pub kind: &'static str,
    pub flops: f64,
}

/// Per-layer FLOPs per input pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopsReport {
    pub entries: Vec<LayerFlops>,
}

impl FlopsReport {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.flops).sum()
    }

    pub fn total_kflops(&self) -> f64 {
        self.total() / 1000.0
    }
}

impl fmt::Display for FlopsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:<9} {:>12}", "layer", "kind", "FLOPs/px")?;
        for e in &self.entries {
            writeln!(f, "{:<28} {:<9} {:>12.1}", e.name, e.kind, e.flops)?;
        }
        write!(f, "total {:.2} kFLOPs/pixel", self.total_kflops())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_conv_flops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut net, x) = NetworkGraph::new(16);
        net.conv("c", x, 16, 3, 1, &mut rng);
        assert_eq!(net.count_flops().total(), 4608.0);
    }

    #[test]
    fn downsampled_layers_are_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut net, x) = NetworkGraph::new(4);
        let d = net.avg_down("d", x);
        net.conv("c", d, 4, 3, 1, &mut rng);
        let r = net.count_flops();
        assert_eq!(r.entries[0].flops, 1.0);
        assert_eq!(r.entries[1].flops, 2.0 * 9.0 * 16.0 / 4.0);
    }

    #[test]
    fn cs_and_plain_consume_same_draws() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let (mut p, x) = NetworkGraph::new(2);
        let (mut q, y) = NetworkGraph::new(2);
        p.conv("c", x, 3, 3, 1, &mut a);
        q.csconv("c", y, 3, 3, 4, &mut b);
        let plain = p.params().get(ParamId(0)).values();
        let bank = q.params().get(ParamId(0)).values();
        for k in 0..4 {
            assert_eq!(&bank[k * plain.len()..(k + 1) * plain.len()], plain);
        }
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn csconv_without_classes_is_contract_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut net, x) = NetworkGraph::new(1);
        net.csconv("c", x, 1, 3, 2, &mut rng);
        let r = net.infer(&Tensor::zeros(Shape::new(1, 1, 4, 4)), None);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn radius_of_stacked_convs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut net, x) = NetworkGraph::new(1);
        let a = net.conv("a", x, 2, 3, 1, &mut rng);
        let b = net.conv("b", a, 2, 5, 1, &mut rng);
        net.conv("c", b, 1, 1, 1, &mut rng);
        assert_eq!(net.receptive_radius(), 3);
    }
}
