//! Paired training runs of one CS-EDSR under two classifiers: eigen-analysis
//! of the clean patch and of the noisy patch. Each pair shares its seed, so
//! patches, noise and initial weights match and only the class maps differ.
//!
//! cargo run --release --example ablation_classifiers -- [steps] [pairs]

use csdn::csdn::{Csdn, CsdnConfig};
use csdn::pipeline::{train_csdn, Classifier, TrainConfig};
use csdn::stats::HashConfig;
use csdn::synth::toy_corpus;

fn main() -> csdn::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(600);
    let pairs: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let images = toy_corpus(96);
    let hash = HashConfig::default();

    println!("{:<6} {:>12} {:>12}", "seed", "raisr-clean", "raisr-noisy");
    let mut wins = 0;
    for seed in 0..pairs {
        let cfg = TrainConfig::toy(steps, seed);
        let mut finals = Vec::new();
        for classifier in [Classifier::RaisrClean, Classifier::RaisrNoisy] {
            let mut net = Csdn::new(CsdnConfig::edsr(2, 8, true), seed)?;
            finals.push(train_csdn(&images, &cfg, &mut net, classifier, &hash)?.last());
        }
        wins += usize::from(finals[0] <= finals[1]);
        println!("{seed:<6} {:>12.5} {:>12.5}", finals[0], finals[1]);
    }
    println!("clean-stats classification at or below noisy in {wins} of {pairs} pairs");
    Ok(())
}
