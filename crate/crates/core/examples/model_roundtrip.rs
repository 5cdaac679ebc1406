//! Saves a denoiser, loads it back and checks that the bytes and the output
//! are unchanged.
//!
//! cargo run --example model_roundtrip

use csdn::csdn::{Csdn, CsdnConfig};
use csdn::model::{load_csdn, load_model, save_model, Model, SavedModel};
use csdn::stats::{compute_class_map, HashConfig};
use csdn::synth::stripes;

fn main() -> csdn::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("cs_edsr.csdn");
    let hash = HashConfig::default();
    let saved = SavedModel {
        model: Model::Csdn(Csdn::new(CsdnConfig::edsr(2, 8, true), 9)?),
        hash: hash.clone(),
        seed: 9,
    };
    save_model(&saved, &path)?;
    let first = std::fs::read(&path)?;
    for (k, v) in saved.metadata() {
        println!("{k}={v}");
    }

    let again = load_model(&path)?;
    save_model(&again, &path)?;
    println!("{} bytes, identical after reload: {}", first.len(), first == std::fs::read(&path)?);

    let img = stripes(24, 24, 7.0, 0.4);
    let (_, classes) = compute_class_map(&img, &hash)?;
    let Model::Csdn(original) = &saved.model else { unreachable!() };
    let (loaded, _) = load_csdn(&path)?;
    let a = original.denoise(&img, &classes)?;
    let b = loaded.denoise(&img, &classes)?;
    println!("outputs bit-identical: {}", a.data() == b.data());
    Ok(())
}
