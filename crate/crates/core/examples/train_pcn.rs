//! Trains the pixel classification network on the procedural corpus and
//! compares its statistics against eigen-analysis of the noisy images, both
//! scored against eigen-analysis of the clean images.
//!
//! cargo run --release --example train_pcn -- [steps]

use std::time::Instant;

use csdn::pcn::{Pcn, PcnConfig};
use csdn::pipeline::{add_awgn, train_pcn, TrainConfig};
use csdn::stats::{compute_stats, hash_classes, HashConfig};
use csdn::synth::toy_corpus;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> csdn::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let images = toy_corpus(96);
    let hash = HashConfig::default();
    let mut pcn = Pcn::new(PcnConfig::default(), 3)?;
    let cfg = TrainConfig::toy(steps, 11);

    let start = Instant::now();
    let report = train_pcn(&images, &cfg, &mut pcn, &hash)?;
    println!("trained {} steps in {:.1?}", cfg.epochs * cfg.steps_per_epoch, start.elapsed());
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {e:>2}  loss {l:.5}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    println!("{:<6} {:>10} {:>10} {:>12} {:>12}", "image", "mse pcn", "mse raisr", "class pcn", "class raisr");
    for (i, clean) in images.iter().enumerate() {
        let noisy = add_awgn(clean, cfg.sigma, &mut rng);
        let truth = compute_stats(clean, &hash)?;
        let from_pcn = pcn.predict(&noisy)?;
        let from_raisr = compute_stats(&noisy, &hash)?;
        let agree = |s| {
            let a = hash_classes(&truth, &hash);
            let b = hash_classes(s, &hash);
            a.indices().iter().zip(b.indices()).filter(|(x, y)| x == y).count() as f64 / a.indices().len() as f64
        };
        println!(
            "toy{i:<3} {:>10.5} {:>10.5} {:>11.1}% {:>11.1}%",
            from_pcn.normalized_mse(&truth)?,
            from_raisr.normalized_mse(&truth)?,
            100.0 * agree(&from_pcn),
            100.0 * agree(&from_raisr)
        );
    }
    Ok(())
}
