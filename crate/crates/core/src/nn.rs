//! Differentiable layers: grouped 2-D convolution, (P)ReLU, 2x average
//! downsampling, 2x bilinear upsampling and the mean L1 loss.
//!
//! All convolutions use stride 1 and zero padding `K / 2`, so spatial
//! extents are preserved.

use crate::autograd::{BackwardOp, Graph, Var};
use crate::error::{config_err, shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// Kernel `(C_out, C_in / groups, K, K)` and optional bias `(1, C_out, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub kernel: Tensor,
    pub bias: Option<Tensor>,
    pub groups: usize,
}

impl ConvWeights {
    pub fn new(kernel: Tensor, bias: Option<Tensor>, groups: usize) -> Result<Self> {
        let w = ConvWeights { kernel, bias, groups };
        w.validate()?;
        Ok(w)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape().n()
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape().c() * self.groups
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape().h()
    }

    fn validate(&self) -> Result<()> {
        let ks = self.kernel.shape();
        if self.groups == 0 {
            return config_err("groups must be positive");
        }
        if ks.h() != ks.w() || ks.h().is_multiple_of(2) {
            return config_err(format!("kernel must be square with odd size, got {ks}"));
        }
        if !ks.n().is_multiple_of(self.groups) {
            return config_err(format!("{} output channels not divisible by {} groups", ks.n(), self.groups));
        }
        if let Some(b) = &self.bias {
            if b.numel() != ks.n() {
                return shape_err(format!("bias has {} entries for {} output channels", b.numel(), ks.n()));
            }
        }
        Ok(())
    }
}

/// Geometry of one convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub groups: usize,
}

impl ConvGeom {
    fn plane(&self) -> usize {
        self.h * self.w
    }
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
}

/// Valid output range `lo..hi` along an axis of length `len` for tap offset `d`.
#[inline]
pub(crate) fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

/// Per output pixel: start from the bias, then add taps in `(c_in, ky, kx)`
/// order, skipping taps that fall in the zero padding.
pub(crate) fn conv_forward(x: &[f64], g: ConvGeom, weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let plane = g.plane();
    let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.k);
    let r = (k / 2) as isize;
    let mut out = vec![0.0; g.n * g.cout * plane];
    for n in 0..g.n {
        for co in 0..g.cout {
            let group = co / cout_g;
            let o = &mut out[(n * g.cout + co) * plane..][..plane];
            if let Some(b) = bias {
                o.fill(b[co]);
            }
            for cil in 0..cin_g {
                let ci = group * cin_g + cil;
                let xin = &x[(n * g.cin + ci) * plane..][..plane];
                for ky in 0..k {
                    let dy = ky as isize - r;
                    let (y0, y1) = valid_range(g.h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - r;
                        let (x0, x1) = valid_range(g.w, dx);
                        let wv = weight[((co * cin_g + cil) * k + ky) * k + kx];
                        for y in y0..y1 {
                            let src = ((y as isize + dy) as usize) * g.w;
                            let orow = &mut o[y * g.w + x0..y * g.w + x1];
                            let irow = &xin[(src as isize + x0 as isize + dx) as usize..][..x1 - x0];
                            for (ov, iv) in orow.iter_mut().zip(irow) {
                                *ov += wv * iv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_backward_input(grad: &[f64], g: ConvGeom, weight: &[f64]) -> Vec<f64> {
    let plane = g.plane();
    let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.k);
    let r = (k / 2) as isize;
    let mut gx = vec![0.0; g.n * g.cin * plane];
    for n in 0..g.n {
        for ci in 0..g.cin {
            let group = ci / cin_g;
            let cil = ci % cin_g;
            let dst = &mut gx[(n * g.cin + ci) * plane..][..plane];
            for co in group * cout_g..(group + 1) * cout_g {
                let go = &grad[(n * g.cout + co) * plane..][..plane];
                for ky in 0..k {
                    let dy = ky as isize - r;
                    let (y0, y1) = valid_range(g.h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - r;
                        let (x0, x1) = valid_range(g.w, dx);
                        let wv = weight[((co * cin_g + cil) * k + ky) * k + kx];
                        for y in y0..y1 {
                            let row = ((y as isize + dy) as usize) * g.w;
                            let drow = &mut dst[(row as isize + x0 as isize + dx) as usize..][..x1 - x0];
                            let grow = &go[y * g.w + x0..y * g.w + x1];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

pub(crate) fn conv_backward_weight(grad: &[f64], x: &[f64], g: ConvGeom) -> Vec<f64> {
    let plane = g.plane();
    let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.k);
    let r = (k / 2) as isize;
    let mut gw = vec![0.0; g.cout * cin_g * k * k];
    for n in 0..g.n {
        for co in 0..g.cout {
            let group = co / cout_g;
            let go = &grad[(n * g.cout + co) * plane..][..plane];
            for cil in 0..cin_g {
                let ci = group * cin_g + cil;
                let xin = &x[(n * g.cin + ci) * plane..][..plane];
                for ky in 0..k {
                    let dy = ky as isize - r;
                    let (y0, y1) = valid_range(g.h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - r;
                        let (x0, x1) = valid_range(g.w, dx);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let row = ((y as isize + dy) as usize) * g.w;
                            let irow = &xin[(row as isize + x0 as isize + dx) as usize..][..x1 - x0];
                            let grow = &go[y * g.w + x0..y * g.w + x1];
                            acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gw[((co * cin_g + cil) * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    }
    gw
}

/// Sum of each output channel's gradient plane over the batch.
pub(crate) fn channel_sums(grad: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for b in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += grad[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
        }
    }
    out
}

struct ConvOp {
    geom: ConvGeom,
    has_bias: bool,
}

impl BackwardOp for ConvOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let g = self.geom;
        let mut out = vec![
            needs[0].then(|| conv_backward_input(grad, g, inputs[1].values())),
            needs[1].then(|| conv_backward_weight(grad, inputs[0].values(), g)),
        ];
        if self.has_bias {
            out.push(needs[2].then(|| channel_sums(grad, g.n, g.cout, g.h * g.w)));
        }
        out
    }
}

fn conv_geom(input: Shape, kernel: Shape, groups: usize) -> Result<ConvGeom> {
    if groups == 0 || !input.c().is_multiple_of(groups) || !kernel.n().is_multiple_of(groups) {
        return config_err(format!(
            "groups {groups} must divide input channels {} and output channels {}",
            input.c(),
            kernel.n()
        ));
    }
    if kernel.h() != kernel.w() || kernel.h().is_multiple_of(2) {
        return config_err(format!("kernel must be square with odd size, got {kernel}"));
    }
    if kernel.c() * groups != input.c() {
        return shape_err(format!(
            "kernel {kernel} with {groups} groups expects {} input channels, got {}",
            kernel.c() * groups,
            input.c()
        ));
    }
    Ok(ConvGeom {
        n: input.n(),
        cin: input.c(),
        cout: kernel.n(),
        h: input.h(),
        w: input.w(),
        k: kernel.h(),
        groups,
    })
}

impl Graph {
    /// Grouped 2-D convolution with zero padding. `weight` is
    /// `(C_out, C_in / groups, K, K)`, `bias` holds `C_out` values.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, groups: usize) -> Result<Var> {
        let geom = conv_geom(self.shape(x), self.shape(weight), groups)?;
        if let Some(b) = bias {
            if self.shape(b).numel() != geom.cout {
                return shape_err(format!("bias {} for {} output channels", self.shape(b), geom.cout));
            }
        }
        let out = conv_forward(
            self.value(x),
            geom,
            self.value(weight),
            bias.map(|b| self.value(b)),
        );
        let shape = Shape::new(geom.n, geom.cout, geom.h, geom.w);
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push_op(
            Tensor::from_vec(shape, out)?,
            inputs,
            ConvOp {
                geom,
                has_bias: bias.is_some(),
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|&v| if v >= 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::from_vec(self.shape(x), out).expect("same shape");
        self.push_op(t, vec![x], ReluOp)
    }

    /// `x` where `x >= 0`, else `alpha[c] * x`. `alpha` holds one value per
    /// channel, or a single shared value.
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let s = self.shape(x);
        let na = self.shape(alpha).numel();
        if na != s.c() && na != 1 {
            return shape_err(format!("prelu alpha has {na} entries for {} channels", s.c()));
        }
        let out = prelu_forward(self.value(x), s, self.value(alpha));
        Ok(self.push_op(Tensor::from_vec(s, out)?, vec![x, alpha], PreluOp))
    }

    /// Mean of each 2x2 block. Height and width must be even.
    pub fn avg_downsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let (out, os) = avg_down_forward(self.value(x), s)?;
        Ok(self.push_op(Tensor::from_vec(os, out)?, vec![x], AvgDownOp))
    }

    /// Doubles height and width with half-pixel-centred bilinear sampling and
    /// edge clamping.
    pub fn bilinear_upsample2x(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (out, os) = bilinear_up_forward(self.value(x), s);
        self.push_op(Tensor::from_vec(os, out).expect("shape"), vec![x], BilinearUpOp)
    }

    /// Mean absolute difference, as a scalar.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(format!("l1_loss: {sa} vs {sb}"));
        }
        let v = l1_value(self.value(a), self.value(b));
        Ok(self.push_op(Tensor::scalar(v), vec![a, b], L1Op))
    }
}

fn prelu_forward(x: &[f64], s: Shape, alpha: &[f64]) -> Vec<f64> {
    let plane = s.plane();
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 {
                v
            } else {
                let c = if alpha.len() == 1 { 0 } else { (i / plane) % s.c() };
                alpha[c] * v
            }
        })
        .collect()
}

fn avg_down_forward(x: &[f64], s: Shape) -> Result<(Vec<f64>, Shape)> {
    if !s.h().is_multiple_of(2) || !s.w().is_multiple_of(2) {
        return shape_err(format!("avg_downsample2x needs even extents, got {s}"));
    }
    let (h2, w2) = (s.h() / 2, s.w() / 2);
    let os = Shape::new(s.n(), s.c(), h2, w2);
    let mut out = vec![0.0; os.numel()];
    for p in 0..s.n() * s.c() {
        let src = &x[p * s.plane()..][..s.plane()];
        let dst = &mut out[p * h2 * w2..][..h2 * w2];
        for y in 0..h2 {
            let r0 = &src[2 * y * s.w()..][..s.w()];
            let r1 = &src[(2 * y + 1) * s.w()..][..s.w()];
            for xo in 0..w2 {
                dst[y * w2 + xo] = 0.25 * (r0[2 * xo] + r0[2 * xo + 1] + r1[2 * xo] + r1[2 * xo + 1]);
            }
        }
    }
    Ok((out, os))
}

/// Source taps and weights for each output index of a 2x half-pixel
/// upsampling along an axis of length `len`.
fn upsample_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let s = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

fn bilinear_up_forward(x: &[f64], s: Shape) -> (Vec<f64>, Shape) {
    let os = Shape::new(s.n(), s.c(), 2 * s.h(), 2 * s.w());
    if s.numel() == 0 {
        return (Vec::new(), os);
    }
    let ty = upsample_taps(s.h());
    let tx = upsample_taps(s.w());
    let mut out = vec![0.0; os.numel()];
    let mut rows = vec![0.0; s.h() * os.w()];
    for p in 0..s.n() * s.c() {
        let src = &x[p * s.plane()..][..s.plane()];
        for y in 0..s.h() {
            for (xo, &(i0, i1, t)) in tx.iter().enumerate() {
                rows[y * os.w() + xo] = (1.0 - t) * src[y * s.w() + i0] + t * src[y * s.w() + i1];
            }
        }
        let dst = &mut out[p * os.plane()..][..os.plane()];
        for (yo, &(i0, i1, t)) in ty.iter().enumerate() {
            for xo in 0..os.w() {
                dst[yo * os.w() + xo] = (1.0 - t) * rows[i0 * os.w() + xo] + t * rows[i1 * os.w() + xo];
            }
        }
    }
    (out, os)
}

fn l1_value(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

struct ReluOp;
impl BackwardOp for ReluOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0].values();
        vec![Some(g.iter().zip(x).map(|(g, &x)| if x >= 0.0 { *g } else { 0.0 }).collect())]
    }
}

struct PreluOp;
impl BackwardOp for PreluOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let s = inputs[0].shape();
        let x = inputs[0].values();
        let alpha = inputs[1].values();
        let shared = alpha.len() == 1;
        let plane = s.plane();
        let chan = |i: usize| if shared { 0 } else { (i / plane) % s.c() };
        let gx = needs[0].then(|| {
            g.iter()
                .zip(x)
                .enumerate()
                .map(|(i, (g, &x))| if x >= 0.0 { *g } else { alpha[chan(i)] * g })
                .collect()
        });
        let ga = needs[1].then(|| {
            let mut ga = vec![0.0; alpha.len()];
            for (i, (g, &x)) in g.iter().zip(x).enumerate() {
                if x < 0.0 {
                    ga[chan(i)] += g * x;
                }
            }
            ga
        });
        vec![gx, ga]
    }
}

struct AvgDownOp;
impl BackwardOp for AvgDownOp {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let s = inputs[0].shape();
        let os = output.shape();
        let mut gx = vec![0.0; s.numel()];
        for p in 0..s.n() * s.c() {
            let src = &g[p * os.plane()..][..os.plane()];
            let dst = &mut gx[p * s.plane()..][..s.plane()];
            for y in 0..s.h() {
                for x in 0..s.w() {
                    dst[y * s.w() + x] = 0.25 * src[(y / 2) * os.w() + x / 2];
                }
            }
        }
        vec![Some(gx)]
    }
}

struct BilinearUpOp;
impl BackwardOp for BilinearUpOp {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let s = inputs[0].shape();
        let os = output.shape();
        let ty = upsample_taps(s.h());
        let tx = upsample_taps(s.w());
        let mut gx = vec![0.0; s.numel()];
        let mut rows = vec![0.0; s.h() * os.w()];
        for p in 0..s.n() * s.c() {
            rows.fill(0.0);
            let src = &g[p * os.plane()..][..os.plane()];
            for (yo, &(i0, i1, t)) in ty.iter().enumerate() {
                for xo in 0..os.w() {
                    let v = src[yo * os.w() + xo];
                    rows[i0 * os.w() + xo] += (1.0 - t) * v;
                    rows[i1 * os.w() + xo] += t * v;
                }
            }
            let dst = &mut gx[p * s.plane()..][..s.plane()];
            for y in 0..s.h() {
                for (xo, &(i0, i1, t)) in tx.iter().enumerate() {
                    let v = rows[y * os.w() + xo];
                    dst[y * s.w() + i0] += (1.0 - t) * v;
                    dst[y * s.w() + i1] += t * v;
                }
            }
        }
        vec![Some(gx)]
    }
}

struct L1Op;
impl BackwardOp for L1Op {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0].values(), inputs[1].values());
        let scale = g[0] / a.len() as f64;
        let sign = |d: f64| {
            if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            }
        };
        vec![
            needs[0].then(|| a.iter().zip(b).map(|(x, y)| scale * sign(x - y)).collect()),
            needs[1].then(|| a.iter().zip(b).map(|(x, y)| -scale * sign(x - y)).collect()),
        ]
    }
}

/// Convolution of a plain tensor, outside any graph.
pub fn conv2d(input: &Tensor, weights: &ConvWeights) -> Result<Tensor> {
    weights.validate()?;
    let geom = conv_geom(input.shape(), weights.kernel.shape(), weights.groups)?;
    let out = conv_forward(
        input.values(),
        geom,
        weights.kernel.values(),
        weights.bias.as_ref().map(|b| b.values()),
    );
    Tensor::from_vec(Shape::new(geom.n, geom.cout, geom.h, geom.w), out)
}

pub fn prelu(input: &Tensor, alpha: &[f64]) -> Result<Tensor> {
    let s = input.shape();
    if alpha.len() != s.c() && alpha.len() != 1 {
        return shape_err(format!("prelu alpha has {} entries for {} channels", alpha.len(), s.c()));
    }
    Tensor::from_vec(s, prelu_forward(input.values(), s, alpha))
}

pub fn avg_downsample2x(input: &Tensor) -> Result<Tensor> {
    let (out, os) = avg_down_forward(input.values(), input.shape())?;
    Tensor::from_vec(os, out)
}

pub fn bilinear_upsample2x(input: &Tensor) -> Tensor {
    let (out, os) = bilinear_up_forward(input.values(), input.shape());
    Tensor::from_vec(os, out).expect("shape")
}

pub fn l1_loss(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return shape_err(format!("l1_loss: {} vs {}", a.shape(), b.shape()));
    }
    Ok(l1_value(a.values(), b.values()))
}
