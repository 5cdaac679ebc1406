use std::path::Path;
use std::process::{Command, Output};

use csdn::csdn::{Csdn, CsdnConfig};
use csdn::imageio::{read_image, write_image};
use csdn::model::{save_model, Model, SavedModel};
use csdn::stats::{compute_class_map, HashConfig};
use csdn::synth::toy_corpus;

fn csdn_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csdn")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, im) in toy_corpus(32).iter().enumerate() {
        write_image(im, dir.join(format!("toy{i}.pgm"))).unwrap();
    }
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(csdn_cmd(&["--help"]).status.code(), Some(0));
    assert_eq!(csdn_cmd(&["flops", "--help"]).status.code(), Some(0));
    assert_eq!(csdn_cmd(&[]).status.code(), Some(1));
    assert_eq!(csdn_cmd(&["bogus"]).status.code(), Some(1));
    assert_eq!(csdn_cmd(&["denoise", "--in", "x.pgm"]).status.code(), Some(1));
    assert_eq!(csdn_cmd(&["classify", "--in", "a", "--out", "b", "--raisr", "--pcn", "p"]).status.code(), Some(1));
}

#[test]
fn missing_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let model = dir.path().join("m.csdn");
    let saved = SavedModel {
        model: Model::Csdn(Csdn::new(CsdnConfig::edsr(1, 4, true), 0).unwrap()),
        hash: HashConfig::default(),
        seed: 0,
    };
    save_model(&saved, &model).unwrap();
    let out = csdn_cmd(&["eval", "--data", s(&empty), "--raisr", "--csdn", s(&model), "--report", "r.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no images found"));
    let out = csdn_cmd(&["classify", "--in", s(&dir.path().join("nope.pgm")), "--raisr", "--out", "x.pgm"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn raisr_classify_writes_scaled_map_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    corpus(&dir.path().join("data"));
    let input = dir.path().join("data/toy1.pgm");
    let map = dir.path().join("map.pgm");
    let stats = dir.path().join("stats.csv");
    let out = csdn_cmd(&["classify", "--in", s(&input), "--raisr", "--out", s(&map), "--stats", s(&stats)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let (_, classes) = compute_class_map(&read_image(&input).unwrap(), &HashConfig::default()).unwrap();
    let written = read_image(&map).unwrap();
    for (&c, &v) in classes.indices().iter().zip(written.data()) {
        let want = (255.0 * (c - 1) as f64 / 71.0).round();
        assert_eq!((v * 255.0).round(), want);
    }
    let csv = std::fs::read_to_string(&stats).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("y,x,phi,strength,coherence,class"));
    assert_eq!(lines.count(), 32 * 32);
}

#[test]
fn train_denoise_eval_flops_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data);
    let pcn = dir.path().join("pcn.csdn");
    let den = dir.path().join("den.csdn");
    let small = ["--epochs", "1", "--steps-per-epoch", "2", "--patch", "16", "--batch", "2"];

    let mut args = vec!["train-pcn", "--data", s(&data), "--out", s(&pcn)];
    args.extend(small);
    let out = csdn_cmd(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "blocks=1\nfeatures=4\nepochs=1\nsteps_per_epoch=2\npatch=16\nbatch=2\n").unwrap();
    let out = csdn_cmd(&["train-csdn", "--config", s(&cfg), "--data", s(&data), "--pcn", s(&pcn), "--out", s(&den)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let denoised = dir.path().join("out.png");
    let input = data.join("toy0.pgm");
    let out = csdn_cmd(&["denoise", "--in", s(&input), "--pcn", s(&pcn), "--csdn", s(&den), "--out", s(&denoised)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let img = read_image(&denoised).unwrap();
    assert_eq!((img.height(), img.width()), (32, 32));

    let report = dir.path().join("report.csv");
    let out = csdn_cmd(&["eval", "--data", s(&data), "--pcn", s(&pcn), "--csdn", s(&den), "--report", s(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("# num_blocks=1"));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 1 + 5);

    let out = csdn_cmd(&["flops", "--model", s(&den), "--pcn", s(&pcn)]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("# arch=edsr") && stdout.contains("combined"));
}

#[test]
fn mismatched_class_count_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    corpus(&dir.path().join("data"));
    let model = dir.path().join("m8.csdn");
    let hash = HashConfig {
        m_phi: 8,
        m_lambda: 1,
        m_mu: 1,
        strength_thresholds: vec![],
        coherence_thresholds: vec![],
        ..HashConfig::default()
    };
    let saved = SavedModel {
        model: Model::Csdn(
            Csdn::new(
                CsdnConfig {
                    num_classes: 8,
                    ..CsdnConfig::edsr(1, 4, true)
                },
                0,
            )
            .unwrap(),
        ),
        hash,
        seed: 0,
    };
    save_model(&saved, &model).unwrap();
    let pcn = dir.path().join("pcn.csdn");
    let out = csdn_cmd(&[
        "train-pcn", "--data", s(&dir.path().join("data")), "--out", s(&pcn), "--epochs", "1", "--steps-per-epoch", "1",
        "--patch", "16", "--batch", "1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let input = dir.path().join("data/toy0.pgm");
    let out = csdn_cmd(&["denoise", "--in", s(&input), "--pcn", s(&pcn), "--csdn", s(&model), "--out", "o.pgm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("72"));
}
