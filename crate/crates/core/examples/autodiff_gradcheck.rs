//! Compares reverse-mode gradients of a small conv, PReLU, L1 graph against
//! central finite differences.
//!
//! cargo run --example autodiff_gradcheck

use csdn::autograd::Graph;
use csdn::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn loss(x: &Tensor, w: &Tensor, alpha: &Tensor, target: &Tensor) -> csdn::Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone().with_requires_grad());
    let wv = g.constant(w.clone());
    let av = g.constant(alpha.clone());
    let tv = g.constant(target.clone());
    let y = g.conv2d(xv, wv, None, 1)?;
    let y = g.prelu(y, av)?;
    let l = g.l1_loss(y, tv)?;
    g.backward(l)?;
    Ok((g.tensor(l).item(), g.grad(xv).unwrap().to_vec()))
}

fn main() -> csdn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(Shape([1, 2, 5, 5]), &mut rng);
    let w = random(Shape([3, 2, 3, 3]), &mut rng);
    let alpha = Tensor::full(Shape([1, 3, 1, 1]), 0.25);
    let target = random(Shape([1, 3, 5, 5]), &mut rng);

    let (value, analytic) = loss(&x, &w, &alpha, &target)?;
    println!("loss {value:.6}");
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.values_mut()[i] += h;
        let mut minus = x.clone();
        minus.values_mut()[i] -= h;
        let numeric = (loss(&plus, &w, &alpha, &target)?.0 - loss(&minus, &w, &alpha, &target)?.0) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-5);
        worst = worst.max(rel);
    }
    println!("max relative error over {} inputs: {worst:.2e}", x.numel());
    Ok(())
}
