//! Class-specific convolution on a two-class map: the left half of the image
//! is filtered by class 1, the right half by class 2, and each half matches a
//! plain convolution with that class's kernel.
//!
//! cargo run --example csconv_dispatch

use csdn::csconv::{csconv_forward, ClassMap, FilterBank};
use csdn::nn::conv2d;
use csdn::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> csdn::Result<()> {
    let (h, w, c_in, c_out, k) = (6, 8, 2, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = Tensor::from_vec(Shape([1, c_in, h, w]), (0..c_in * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let weights = (0..2 * c_out * c_in * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let biases = (0..2 * c_out).map(|_| rng.random_range(-0.1..0.1)).collect();
    let bank = FilterBank::new(2, c_out, c_in, k, weights, Some(biases))?;

    let indices = (0..h * w).map(|i| if i % w < w / 2 { 1 } else { 2 }).collect();
    let classes = ClassMap::new(h, w, 2, indices)?;
    println!("class histogram {:?}", classes.histogram());

    let out = csconv_forward(&q, &classes, &bank)?;
    let per_class = [conv2d(&q, &bank.as_conv(1))?, conv2d(&q, &bank.as_conv(2))?];
    let mut worst: f64 = 0.0;
    for co in 0..c_out {
        for y in 0..h {
            for x in 0..w {
                let cls = classes.get(0, y, x) as usize;
                worst = worst.max((out.at(0, co, y, x) - per_class[cls - 1].at(0, co, y, x)).abs());
            }
        }
    }
    println!("max |csconv - conv of own class| = {worst:e}");
    for y in 0..h {
        let row: Vec<String> = (0..w).map(|x| format!("{:+.2}", out.at(0, 0, y, x))).collect();
        println!("{}", row.join(" "));
    }

    let bad = ClassMap::uniform(h, w, 3, 3)?;
    match csconv_forward(&q, &bad, &bank) {
        Err(e) => println!("class 3 with a 2-class bank: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
