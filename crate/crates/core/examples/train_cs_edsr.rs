//! Trains a small CS-EDSR on the procedural corpus with class maps from
//! eigen-analysis of the noisy input, then reports PSNR on the training
//! images.
//!
//! cargo run --release --example train_cs_edsr -- [steps]

use std::time::Instant;

use csdn::csdn::{Csdn, CsdnConfig};
use csdn::pipeline::{evaluate, train_csdn, ClassifiedDenoiser, Classifier, TrainConfig};
use csdn::stats::HashConfig;
use csdn::synth::toy_corpus;

fn main() -> csdn::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let images = toy_corpus(96);
    let hash = HashConfig::default();
    let mut net = Csdn::new(CsdnConfig::edsr(2, 8, true), 1)?;
    let cfg = TrainConfig::toy(steps, 7);

    let start = Instant::now();
    let report = train_csdn(&images, &cfg, &mut net, Classifier::RaisrNoisy, &hash)?;
    println!("trained {} steps in {:.1?}", cfg.epochs * cfg.steps_per_epoch, start.elapsed());
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {e:>2}  loss {l:.5}");
    }

    let named: Vec<_> = images.into_iter().enumerate().map(|(i, im)| (format!("toy{i}"), im)).collect();
    let denoiser = ClassifiedDenoiser::new(Classifier::RaisrNoisy, &net, &hash)?;
    println!("{}", evaluate(&denoiser, &named, cfg.sigma, 99)?);
    Ok(())
}
