//! Local gradient statistics and hash classes of a few procedural images.
//!
//! cargo run --example gradient_stats

use std::f64::consts::PI;

use csdn::stats::{compute_class_map, compute_stats, HashConfig};
use csdn::synth::{checkerboard, disk, ramp, stripes};

fn main() -> csdn::Result<()> {
    let hash = HashConfig::default();
    let n = 48;
    let images = [
        ("stripes 0", stripes(n, n, 10.0, 0.0)),
        ("stripes 45", stripes(n, n, 10.0, PI / 4.0)),
        ("stripes 90", stripes(n, n, 10.0, PI / 2.0)),
        ("ramp 30", ramp(n, n, PI / 6.0)),
        ("disk", disk(n, n, 15.0)),
        ("checker", checkerboard(n, n, 8)),
    ];
    println!("{} classes ({} x {} x {})", hash.num_classes(), hash.m_phi, hash.m_lambda, hash.m_mu);
    println!("{:<11} {:>8} {:>10} {:>10} {:>8}", "image", "phi/pi", "strength", "coherence", "classes");
    for (name, img) in &images {
        let s = compute_stats(img, &hash)?;
        let (y, x) = (n / 2, n / 2);
        let used = compute_class_map(img, &hash)?.1.histogram().iter().filter(|&&c| c > 0).count();
        println!(
            "{name:<11} {:>8.3} {:>10.2e} {:>10.3} {:>8}",
            s.phi.get(y, x) / PI,
            s.strength.get(y, x),
            s.coherence.get(y, x),
            used
        );
    }
    Ok(())
}
