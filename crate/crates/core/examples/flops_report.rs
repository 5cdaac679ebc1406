//! Per-pixel cost of the reference denoisers and the pixel classifier.
//!
//! cargo run --example flops_report -- [--layers]

use csdn::csdn::{build_csdn, CsdnConfig};
use csdn::pcn::{build_pcn, PcnConfig};

fn main() -> csdn::Result<()> {
    let per_layer = std::env::args().any(|a| a == "--layers");
    let pcn = build_pcn(&PcnConfig::default(), 0)?.count_flops();
    let nets = [
        ("EDSR (16 blocks, 16 features)", CsdnConfig::edsr(16, 16, false)),
        ("CS-EDSR (16 blocks, 16 features)", CsdnConfig::edsr(16, 16, true)),
        ("CARN (16 features)", CsdnConfig::carn(16, false)),
        ("CS-CARN (16 features)", CsdnConfig::carn(16, true)),
    ];
    for (label, cfg) in nets {
        let net = build_csdn(&cfg, 0)?;
        let report = net.count_flops();
        if per_layer {
            println!("{label}\n{report}");
        }
        let extra = if cfg.use_csconv { pcn.total_kflops() } else { 0.0 };
        println!(
            "{label:<34} {:>8} params {:>8.2} kFLOPs/px {:>8.2} with classifier",
            net.num_params(),
            report.total_kflops(),
            report.total_kflops() + extra
        );
    }
    println!("PCN {:>36.2} kFLOPs/px", pcn.total_kflops());
    Ok(())
}
