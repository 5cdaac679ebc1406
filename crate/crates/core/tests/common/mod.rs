#![allow(dead_code)]

use csdn::autograd::{Graph, Var};
use csdn::csconv::ClassMap;
use csdn::tensor::{Shape, Tensor};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps round-off on vanishing
/// gradients from reading as a large relative error.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn random_tensor(shape: Shape, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_classes(batch: usize, h: usize, w: usize, m: usize, rng: &mut impl Rng) -> ClassMap {
    let idx = (0..batch * h * w).map(|_| rng.random_range(1..=m as u32)).collect();
    ClassMap::batched(batch, h, w, m, idx).unwrap()
}

/// `sum(v * r)` for a fixed random `r`: a smooth scalar readout of `v`.
pub fn readout(g: &mut Graph, v: Var, r: &Tensor) -> Var {
    let rv = g.constant(r.clone());
    let p = g.mul(v, rv).unwrap();
    g.sum(p)
}

/// Largest relative error between reverse-mode and central-difference
/// gradients with respect to every entry of every input.
pub fn gradcheck(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_requires_grad())).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();

    let eval = |inputs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.tensor(loss).item()
    };
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut probe = inputs.to_vec();
            probe[i].values_mut()[j] = t.values()[j] + FD_STEP;
            let plus = eval(&probe);
            probe[i].values_mut()[j] = t.values()[j] - FD_STEP;
            let minus = eval(&probe);
            worst = worst.max(rel_err(analytic[i][j], (plus - minus) / (2.0 * FD_STEP)));
        }
    }
    worst
}
