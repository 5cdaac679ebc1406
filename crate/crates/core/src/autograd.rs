//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the tape is
//! already topologically sorted and `backward` is a single reverse sweep.
//! Parameters enter the tape as leaves copied from a [`ParamStore`]; after
//! `backward`, [`Graph::accumulate_param_grads`] pushes their gradients back.
//!
//! One graph per forward pass. A graph is not `Sync`; independent graphs can
//! be used from different threads.

use std::collections::HashMap;

use crate::error::{shape_err, Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Local derivative rule of one recorded operation.
pub trait BackwardOp {
    /// Returns one gradient per input, in input order. Entries may be `None`
    /// where `needs[i]` is false.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    tensor: Tensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn BackwardOp>>,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records `t` as a leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            tensor: t,
            inputs: Vec::new(),
            op: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records `t` as a leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    /// Leaf for parameter `id`. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let mut t = store.get(id).clone();
        t.zero_grad();
        let v = self.leaf(t);
        self.nodes[v.0].param = Some(id);
        self.param_leaves.insert(id, v);
        v
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.values()
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad()
    }

    /// Records an operation result. The output requires a gradient when any
    /// input does.
    pub fn push_op(&mut self, mut out: Tensor, inputs: Vec<Var>, op: impl BackwardOp + 'static) -> Var {
        let requires = inputs.iter().any(|&v| self.requires_grad(v));
        out.set_requires_grad(requires);
        self.nodes.push(Node {
            tensor: out,
            inputs,
            op: if requires { Some(Box::new(op)) } else { None },
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates gradients from a scalar `loss` to every reachable node that
    /// requires a gradient. Gradients add onto whatever is already stored;
    /// call [`Graph::zero_grad`] between independent passes.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != Shape::SCALAR {
            return Err(Error::Contract(format!(
                "backward needs a (1, 1, 1, 1) loss, got {shape}"
            )));
        }
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adjoint[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adjoint[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(op) = &node.op {
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].tensor).collect();
                let needs: Vec<bool> = inputs.iter().map(|t| t.requires_grad()).collect();
                let grads = op.backward(&inputs, &node.tensor, &g, &needs);
                debug_assert_eq!(grads.len(), node.inputs.len());
                for (input, grad) in node.inputs.iter().zip(grads) {
                    let Some(grad) = grad else { continue };
                    if !self.nodes[input.0].tensor.requires_grad() {
                        continue;
                    }
                    match &mut adjoint[input.0] {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, d)| *a += d),
                        slot @ None => *slot = Some(grad),
                    }
                }
            }
            if node.tensor.requires_grad() || i == loss.0 {
                self.nodes[i].tensor.accumulate_grad(&g);
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.tensor.zero_grad());
    }

    /// Adds the gradients of parameter leaves into `store`. Parameters that
    /// entered the tape but received no signal get an explicit zero gradient.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            let Some(id) = node.param else { continue };
            let target = store.get_mut(id);
            match node.tensor.grad() {
                Some(g) => target.accumulate_grad(g),
                None => target.accumulate_grad(&vec![0.0; node.tensor.numel()]),
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(format!("add: {sa} vs {sb}"));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push_op(Tensor::from_vec(sa, out)?, vec![a, b], AddOp))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(format!("sub: {sa} vs {sb}"));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        Ok(self.push_op(Tensor::from_vec(sa, out)?, vec![a, b], SubOp))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(format!("mul: {sa} vs {sb}"));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push_op(Tensor::from_vec(sa, out)?, vec![a, b], MulOp))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|x| x * factor).collect();
        let t = Tensor::from_vec(self.shape(a), out).expect("same shape");
        self.push_op(t, vec![a], ScaleOp(factor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        self.push_op(Tensor::scalar(s), vec![a], SumOp { scale: 1.0 })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.shape(a).numel() as f64;
        let s: f64 = self.value(a).iter().sum();
        self.push_op(Tensor::scalar(s / n), vec![a], SumOp { scale: 1.0 / n })
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat of zero tensors");
        };
        let s0 = self.shape(first);
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.n() != s0.n() || s.h() != s0.h() || s.w() != s0.w() {
                return shape_err(format!("concat: {s} incompatible with {s0}"));
            }
            channels.push(s.c());
        }
        let total: usize = channels.iter().sum();
        let out_shape = s0.with_channels(total);
        let plane = s0.plane();
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n() {
            for (&p, &c) in parts.iter().zip(&channels) {
                let src = &self.value(p)[n * c * plane..(n + 1) * c * plane];
                out.extend_from_slice(src);
            }
        }
        Ok(self.push_op(Tensor::from_vec(out_shape, out)?, parts.to_vec(), ConcatOp { channels }))
    }

    /// Channels `start..start + len` of `a`.
    pub fn narrow_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.c() || len == 0 {
            return shape_err(format!("narrow {start}+{len} out of {} channels", s.c()));
        }
        let plane = s.plane();
        let mut out = Vec::with_capacity(s.n() * len * plane);
        for n in 0..s.n() {
            let base = (n * s.c() + start) * plane;
            out.extend_from_slice(&self.value(a)[base..base + len * plane]);
        }
        let t = Tensor::from_vec(s.with_channels(len), out)?;
        Ok(self.push_op(t, vec![a], NarrowOp { start, len, channels: s.c() }))
    }
}

struct AddOp;
impl BackwardOp for AddOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        needs.iter().map(|&n| n.then(|| g.to_vec())).collect()
    }
}

struct SubOp;
impl BackwardOp for SubOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| g.iter().map(|v| -v).collect()),
        ]
    }
}

struct MulOp;
impl BackwardOp for MulOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0].values(), inputs[1].values());
        vec![
            needs[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
            needs[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
        ]
    }
}

struct ScaleOp(f64);
impl BackwardOp for ScaleOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.iter().map(|v| v * self.0).collect())]
    }
}

struct SumOp {
    scale: f64,
}
impl BackwardOp for SumOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0] * self.scale; inputs[0].numel()])]
    }
}

struct ConcatOp {
    channels: Vec<usize>,
}
impl BackwardOp for ConcatOp {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let s = output.shape();
        let plane = s.plane();
        let mut grads: Vec<Option<Vec<f64>>> = needs
            .iter()
            .zip(inputs)
            .map(|(&n, t)| n.then(|| Vec::with_capacity(t.numel())))
            .collect();
        for n in 0..s.n() {
            let mut offset = n * s.c() * plane;
            for (grad, &c) in grads.iter_mut().zip(&self.channels) {
                if let Some(grad) = grad {
                    grad.extend_from_slice(&g[offset..offset + c * plane]);
                }
                offset += c * plane;
            }
        }
        grads
    }
}

struct NarrowOp {
    start: usize,
    len: usize,
    channels: usize,
}
impl BackwardOp for NarrowOp {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let s = output.shape();
        let plane = s.plane();
        let mut grad = vec![0.0; inputs[0].numel()];
        for n in 0..s.n() {
            let dst = (n * self.channels + self.start) * plane;
            let src = n * self.len * plane;
            grad[dst..dst + self.len * plane].copy_from_slice(&g[src..src + self.len * plane]);
        }
        vec![Some(grad)]
    }
}
