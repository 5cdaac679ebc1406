//! Acceptance gates. Every gate prints one `PASS`/`FAIL` line straight to
//! stdout, so the lines show up even while libtest captures output.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use common::{gradcheck, random_classes, random_tensor, readout, rel_err, FD_STEP};
use csdn::autograd::Graph;
use csdn::csconv::{csconv_forward, FilterBank};
use csdn::csdn::{build_csdn, Csdn, CsdnConfig};
use csdn::model::{load_model, save_model, Model, SavedModel};
use csdn::nn::{conv2d, ConvWeights};
use csdn::pcn::{build_pcn, Pcn, PcnConfig};
use csdn::pipeline::{
    add_awgn, evaluate, psnr, ssim, train_csdn, train_pcn, ClassifiedDenoiser, Classifier, Identity, TrainConfig,
};
use csdn::raster::Image;
use csdn::stats::{compute_stats, eigen_stats, hash_class, HashConfig};
use csdn::synth::toy_corpus;
use csdn::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: usize, title: &str, pass: bool, detail: String, start: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {id:>2} {verdict} {title}: {detail} ({:.1?})", start.elapsed()).unwrap();
    out.flush().unwrap();
}

const TOY_SIZE: usize = 96;
const TOY_SIGMA: f64 = 25.0;
const PCN_STEPS: usize = 1000;
const CSDN_STEPS: usize = 2000;

fn toy_csdn_config() -> CsdnConfig {
    CsdnConfig::edsr(2, 8, true)
}

/// Toy-trained PCNs for seeds 0, 1 and 2, shared by the gates that need them.
fn trained_pcns() -> &'static [Pcn] {
    static PCNS: OnceLock<Vec<Pcn>> = OnceLock::new();
    PCNS.get_or_init(|| {
        let images = toy_corpus(TOY_SIZE);
        let hash = HashConfig::default();
        (0..3)
            .map(|seed| {
                let mut pcn = Pcn::new(PcnConfig::default(), seed).unwrap();
                train_pcn(&images, &TrainConfig::toy(PCN_STEPS, seed), &mut pcn, &hash).unwrap();
                pcn
            })
            .collect()
    })
}

#[test]
fn c01_degenerate_csconv_matches_conv() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(1..=2);
        let c_in = rng.random_range(1..=4);
        let c_out = rng.random_range(1..=4);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let (h, w) = (rng.random_range(3..=10), rng.random_range(3..=10));
        let m = rng.random_range(1..=8);
        let q = random_tensor(Shape([n, c_in, h, w]), &mut rng);
        let conv = ConvWeights::new(
            random_tensor(Shape([c_out, c_in, k, k]), &mut rng),
            Some(random_tensor(Shape([1, c_out, 1, 1]), &mut rng)),
            1,
        )
        .unwrap();
        let bank = FilterBank::from_shared(&conv, m).unwrap();
        let classes = random_classes(n, h, w, m, &mut rng);
        let a = csconv_forward(&q, &classes, &bank).unwrap();
        let b = conv2d(&q, &conv).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            worst = worst.max((x - y).abs());
        }
    }
    let pass = worst < 1e-10;
    report(1, "degenerate CSConv", pass, format!("20 instances, max abs diff {worst:.1e} < 1e-10"), start);
    assert!(pass);
}

/// Worst relative error over sampled parameters of a 2-block, 8-feature
/// CS-EDSR, with parameters jittered off their initial values.
fn network_gradcheck(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = build_csdn(&toy_csdn_config(), seed).unwrap();
    for p in net.params_mut().iter_mut() {
        p.tensor.values_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    let (h, w) = (6, 6);
    let x = random_tensor(Shape([1, 1, h, w]), &mut rng);
    let r = random_tensor(Shape([1, 1, h, w]), &mut rng);
    let classes = random_classes(1, h, w, 72, &mut rng);

    let loss_of = |net: &csdn::network::NetworkGraph| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = net.forward(&mut g, xv, Some(std::rc::Rc::new(classes.clone())), false).unwrap();
        let l = readout(&mut g, out, &r);
        g.tensor(l).item()
    };
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = net.forward(&mut g, xv, Some(std::rc::Rc::new(classes.clone())), true).unwrap();
    let l = readout(&mut g, out, &r);
    g.backward(l).unwrap();
    net.params_mut().zero_grad();
    g.accumulate_param_grads(net.params_mut());
    let grads: Vec<Vec<f64>> = net.params().iter().map(|(_, p)| p.tensor.grad().unwrap().to_vec()).collect();

    let present: Vec<usize> = classes.indices().iter().map(|&c| c as usize - 1).collect();
    let mut worst: f64 = 0.0;
    for (pi, grad) in grads.iter().enumerate() {
        let name = net.params().iter().nth(pi).unwrap().1.name.clone();
        let len = grad.len();
        let per_class = if name.ends_with(".bank") || name.ends_with(".bank_bias") { len / 72 } else { 0 };
        for _ in 0..6 {
            let j = if per_class > 0 {
                let cls = present[rng.random_range(0..present.len())];
                cls * per_class + rng.random_range(0..per_class)
            } else {
                rng.random_range(0..len)
            };
            let orig = net.params().iter().nth(pi).unwrap().1.tensor.values()[j];
            let set = |net: &mut csdn::network::NetworkGraph, v: f64| {
                net.params_mut().iter_mut().nth(pi).unwrap().tensor.values_mut()[j] = v;
            };
            set(&mut net, orig + FD_STEP);
            let plus = loss_of(&net);
            set(&mut net, orig - FD_STEP);
            let minus = loss_of(&net);
            set(&mut net, orig);
            worst = worst.max(rel_err(grad[j], (plus - minus) / (2.0 * FD_STEP)));
        }
    }
    worst
}

#[test]
fn c02_gradient_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut rows = Vec::new();
    let mut record = |name: &str, errs: Vec<f64>, tol: f64| {
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        rows.push((name.to_string(), errs.len(), worst, tol));
    };

    let errs = (0..5)
        .map(|_| {
            let (m, c_in, c_out, k, h, w) = (4, 2, 3, 3, 5, 5);
            let classes = std::rc::Rc::new(random_classes(1, h, w, m, &mut rng));
            let inputs = [
                random_tensor(Shape([1, c_in, h, w]), &mut rng),
                random_tensor(Shape([m * c_out, c_in, k, k]), &mut rng),
                random_tensor(Shape([1, m * c_out, 1, 1]), &mut rng),
            ];
            let r = random_tensor(Shape([1, c_out, h, w]), &mut rng);
            gradcheck(&inputs, |g, v| {
                let y = g.csconv(v[0], classes.clone(), v[1], Some(v[2]), m).unwrap();
                readout(g, y, &r)
            })
        })
        .collect();
    record("csconv", errs, 1e-4);

    let errs = (0..5)
        .map(|_| {
            let inputs = [
                random_tensor(Shape([2, 4, 5, 4]), &mut rng),
                random_tensor(Shape([6, 2, 3, 3]), &mut rng),
                random_tensor(Shape([1, 6, 1, 1]), &mut rng),
            ];
            let r = random_tensor(Shape([2, 6, 5, 4]), &mut rng);
            gradcheck(&inputs, |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 2).unwrap();
                readout(g, y, &r)
            })
        })
        .collect();
    record("grouped conv", errs, 1e-4);

    let errs = (0..5)
        .map(|_| {
            let inputs = [random_tensor(Shape([2, 3, 4, 4]), &mut rng), random_tensor(Shape([1, 3, 1, 1]), &mut rng)];
            let r = random_tensor(Shape([2, 3, 4, 4]), &mut rng);
            gradcheck(&inputs, |g, v| {
                let y = g.prelu(v[0], v[1]).unwrap();
                readout(g, y, &r)
            })
        })
        .collect();
    record("prelu", errs, 1e-4);

    let errs = (0..5)
        .map(|_| {
            let inputs = [random_tensor(Shape([1, 2, 3, 5]), &mut rng)];
            let r = random_tensor(Shape([1, 2, 6, 10]), &mut rng);
            gradcheck(&inputs, |g, v| {
                let y = g.bilinear_upsample2x(v[0]);
                readout(g, y, &r)
            })
        })
        .collect();
    record("bilinear upsample", errs, 1e-4);

    let errs = (0..5)
        .map(|_| {
            let inputs = [random_tensor(Shape([1, 2, 6, 8]), &mut rng)];
            let r = random_tensor(Shape([1, 2, 3, 4]), &mut rng);
            gradcheck(&inputs, |g, v| {
                let y = g.avg_downsample2x(v[0]).unwrap();
                readout(g, y, &r)
            })
        })
        .collect();
    record("avg downsample", errs, 1e-4);

    let errs = (0..5)
        .map(|_| {
            let a = random_tensor(Shape([1, 2, 4, 4]), &mut rng);
            let mut b = random_tensor(Shape([1, 2, 4, 4]), &mut rng);
            for (bv, av) in b.values_mut().iter_mut().zip(a.values()) {
                if (*bv - av).abs() < 1e-3 {
                    *bv += 0.01;
                }
            }
            gradcheck(&[a, b], |g, v| g.l1_loss(v[0], v[1]).unwrap())
        })
        .collect();
    record("l1 loss", errs, 1e-4);

    record("CS-EDSR(2, 8)", (0..5).map(|s| network_gradcheck(300 + s)).collect(), 1e-3);

    let pass = rows.iter().all(|(_, n, worst, tol)| *n >= 5 && worst < tol);
    let detail = rows
        .iter()
        .map(|(name, n, worst, tol)| format!("{name} x{n} {worst:.1e}<{tol:.0e}"))
        .collect::<Vec<_>>()
        .join(", ");
    report(2, "gradient suite", pass, detail, start);
    assert!(pass);
}

/// Largest root of `t^2 - tr t + det` by bisection on `[tr/2, tr]`, smallest
/// by bisection on `[0, tr/2]`.
fn char_poly_roots(a: f64, b: f64, d: f64) -> (f64, f64) {
    let (tr, det) = (a + d, a * d - b * b);
    let p = |t: f64| t * t - tr * t + det;
    let bisect = |mut lo: f64, mut hi: f64, rising: bool| {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (p(mid) > 0.0) == rising {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };
    (bisect(tr / 2.0, tr.max(0.0) + 1.0, true), bisect(-1.0, tr / 2.0, false).max(0.0))
}

#[test]
fn c03_eigen_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut ranges_ok = true;
    for _ in 0..1000 {
        let (p, q, r): (f64, f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0));
        let (a, d) = (p * p, q * q);
        let b = r * p * q;
        let e = eigen_stats(a, b, d);
        let (l1, l2) = char_poly_roots(a, b, d);
        let (vx, vy) = if (l1 - a).abs() + b.abs() > (l1 - d).abs() + b.abs() { (b, l1 - a) } else { (l1 - d, b) };
        let phi = vy.atan2(vx).rem_euclid(PI);
        let dphi = (e.phi - phi).abs();
        let dphi = dphi.min(PI - dphi);
        let mu = (l1.sqrt() - l2.sqrt()) / (l1.sqrt() + l2.sqrt());
        worst = worst.max((e.lambda1 - l1).abs()).max((e.lambda2 - l2).abs()).max(dphi).max((e.mu - mu).abs());
        ranges_ok &= (0.0..=1.0).contains(&e.mu) && (0.0..PI).contains(&e.phi);
    }
    let pass = worst < 1e-10 && ranges_ok;
    report(
        3,
        "eigen-analysis oracle",
        pass,
        format!("1000 PSD tensors, max diff {worst:.1e} < 1e-10, ranges ok {ranges_ok}"),
        start,
    );
    assert!(pass);
}

#[test]
fn c04_hash_totality() {
    let start = Instant::now();
    let cfg = HashConfig::default();
    let mut seen = [false; 73];
    let mut mismatches = 0;
    let mut out_of_range = 0;
    let lambdas: Vec<f64> = (0..64).map(|i| if i == 0 { 0.0 } else { 10f64.powf(-6.0 + 5.0 * i as f64 / 63.0) }).collect();
    for i in 0..64 {
        let phi = i as f64 * PI / 64.0;
        for &lambda in &lambdas {
            for k in 0..64 {
                let mu = k as f64 / 63.0;
                let c = hash_class(phi, lambda, mu, &cfg);
                if !(1..=72).contains(&c) {
                    out_of_range += 1;
                    continue;
                }
                seen[c as usize] = true;
                let q_l = cfg.strength_thresholds.iter().filter(|&&t| lambda > t).count();
                let q_m = cfg.coherence_thresholds.iter().filter(|&&t| mu > t).count();
                let expect = (i / 8) * 9 + q_l * 3 + q_m + 1;
                mismatches += usize::from(c as usize != expect);
            }
        }
    }
    let covered = seen[1..].iter().filter(|&&s| s).count();

    let boundary = [
        (0.0, 0.0, 0.0, 1),
        (PI / 8.0, 0.0, 0.0, 10),
        (PI / 8.0 - 1e-12, 0.0, 0.0, 1),
        (0.0, 1e-4, 0.0, 1),
        (0.0, 1e-4 + 1e-12, 0.0, 4),
        (0.0, 1e-3, 0.0, 4),
        (0.0, 1.0, 0.0, 7),
        (0.0, 0.0, 0.25, 1),
        (0.0, 0.0, 0.5, 2),
        (0.0, 0.0, 1.0, 3),
        (f64::from_bits(PI.to_bits() - 1), 1.0, 1.0, 72),
        (PI, 1.0, 1.0, 72),
    ];
    let boundary_bad: Vec<_> = boundary
        .iter()
        .filter(|&&(p, l, m, want)| hash_class(p, l, m, &cfg) != want)
        .collect();

    let pass = out_of_range == 0 && mismatches == 0 && covered == 72 && boundary_bad.is_empty();
    report(
        4,
        "hash totality",
        pass,
        format!(
            "64^3 grid: {out_of_range} out of range, {mismatches} rule mismatches, {covered}/72 classes hit; {} boundary failures",
            boundary_bad.len()
        ),
        start,
    );
    assert!(pass);
}

#[test]
fn c05_flops_reconciliation() {
    let start = Instant::now();
    let kflops = |cfg: CsdnConfig| build_csdn(&cfg, 0).unwrap().count_flops().total_kflops();
    let edsr = kflops(CsdnConfig::edsr(16, 16, false));
    let carn = kflops(CsdnConfig::carn(16, false));
    let pcn = build_pcn(&PcnConfig::default(), 0).unwrap().count_flops().total_kflops();
    let cs_total = kflops(CsdnConfig::edsr(16, 16, true)) + pcn;
    let within = |v: f64, target: f64| (v - target).abs() <= 0.05 * target;
    let pass = within(edsr, 145.1) && within(carn, 72.6) && within(cs_total, 148.0) && pcn <= 5.0;
    report(
        5,
        "FLOPs reconciliation",
        pass,
        format!(
            "EDSR {edsr:.2} (145.1 +/-5%), CARN {carn:.2} (72.6 +/-5%), CS-EDSR+PCN {cs_total:.2} (148.0 +/-5%), PCN {pcn:.2} <= 5 kFLOPs/px"
        ),
        start,
    );
    assert!(pass);
}

#[test]
fn c06_toy_denoising_gain() {
    let start = Instant::now();
    let images = toy_corpus(TOY_SIZE);
    let hash = HashConfig::default();
    let pcn = &trained_pcns()[0];
    let mut csdn = Csdn::new(toy_csdn_config(), 0).unwrap();
    let cfg = TrainConfig::toy(CSDN_STEPS, 0);
    train_csdn(&images, &cfg, &mut csdn, Classifier::Pcn(pcn), &hash).unwrap();
    let named: Vec<(String, Image)> = images.into_iter().enumerate().map(|(i, im)| (format!("toy{i}"), im)).collect();
    let denoiser = ClassifiedDenoiser::new(Classifier::Pcn(pcn), &csdn, &hash).unwrap();
    let eval = evaluate(&denoiser, &named, TOY_SIGMA, 17).unwrap();
    let gain = eval.mean_psnr() - eval.mean_psnr_noisy();
    let pass = gain >= 3.0;
    report(
        6,
        "toy denoising gain",
        pass,
        format!(
            "CS-EDSR(2, 8, M=72) + PCN, {} steps: {:.2} -> {:.2} dB, gain {gain:.2} >= 3 dB",
            cfg.epochs * cfg.steps_per_epoch,
            eval.mean_psnr_noisy(),
            eval.mean_psnr()
        ),
        start,
    );
    assert!(pass);
}

#[test]
fn c07_pcn_beats_noisy_eigenanalysis() {
    let start = Instant::now();
    let images = toy_corpus(TOY_SIZE);
    let hash = HashConfig::default();
    let mut wins = 0;
    let mut rows = Vec::new();
    for (seed, pcn) in trained_pcns().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed as u64);
        let (mut mse_pcn, mut mse_raisr) = (0.0, 0.0);
        for clean in &images {
            let noisy = add_awgn(clean, TOY_SIGMA, &mut rng);
            let truth = compute_stats(clean, &hash).unwrap();
            mse_pcn += pcn.predict(&noisy).unwrap().normalized_mse(&truth).unwrap();
            mse_raisr += compute_stats(&noisy, &hash).unwrap().normalized_mse(&truth).unwrap();
        }
        let n = images.len() as f64;
        wins += usize::from(mse_pcn < mse_raisr);
        rows.push(format!("seed {seed}: {:.4} vs {:.4}", mse_pcn / n, mse_raisr / n));
    }
    let pass = wins >= 2;
    report(
        7,
        "PCN vs noisy eigen-analysis",
        pass,
        format!("{PCN_STEPS} steps, PCN < RAISR+N in {wins}/3 seeds ({})", rows.join(", ")),
        start,
    );
    assert!(pass);
}

#[test]
fn c08_clean_classes_train_no_worse() {
    let start = Instant::now();
    let images = toy_corpus(TOY_SIZE);
    let hash = HashConfig::default();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..3 {
        let cfg = TrainConfig::toy(CSDN_STEPS, seed);
        let run = |classifier: Classifier<'_>| {
            let mut csdn = Csdn::new(toy_csdn_config(), seed).unwrap();
            train_csdn(&images, &cfg, &mut csdn, classifier, &hash).unwrap().last()
        };
        let clean = run(Classifier::RaisrClean);
        let noisy = run(Classifier::RaisrNoisy);
        wins += usize::from(clean <= noisy);
        rows.push(format!("seed {seed}: {clean:.5} vs {noisy:.5}"));
    }
    let pass = wins >= 2;
    report(
        8,
        "RAISR+C vs RAISR+N final loss",
        pass,
        format!("{CSDN_STEPS} steps, RAISR+C <= RAISR+N in {wins}/3 paired seeds ({})", rows.join(", ")),
        start,
    );
    assert!(pass);
}

#[test]
fn c09_serialization_round_trip() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let hash = HashConfig::default();
    let mut csdn = Csdn::new(toy_csdn_config(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for p in csdn.net.params_mut().iter_mut() {
        p.tensor.values_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.01..0.01));
    }
    let saved = SavedModel {
        model: Model::Csdn(csdn),
        hash: hash.clone(),
        seed: 9,
    };
    let (p1, p2) = (dir.path().join("a.csdn"), dir.path().join("b.csdn"));
    save_model(&saved, &p1).unwrap();
    let loaded = load_model(&p1).unwrap();
    save_model(&loaded, &p2).unwrap();
    let identical = std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap();

    let images: Vec<(String, Image)> =
        toy_corpus(32).into_iter().enumerate().map(|(i, im)| (format!("toy{i}"), im)).collect();
    let (Model::Csdn(before), Model::Csdn(after)) = (&saved.model, &loaded.model) else {
        panic!("expected denoisers");
    };
    let run = |c: &Csdn| {
        let d = ClassifiedDenoiser::new(Classifier::RaisrNoisy, c, &hash).unwrap();
        evaluate(&d, &images, TOY_SIGMA, 5).unwrap()
    };
    let (ra, rb) = (run(before), run(after));
    let bit_match = ra
        .rows
        .iter()
        .zip(&rb.rows)
        .all(|(x, y)| x.psnr.to_bits() == y.psnr.to_bits() && x.ssim.to_bits() == y.ssim.to_bits());
    let outputs_match = images.iter().all(|(_, im)| {
        let (_, classes) = csdn::stats::compute_class_map(im, &hash).unwrap();
        before.denoise(im, &classes).unwrap().data() == after.denoise(im, &classes).unwrap().data()
    });
    let pass = identical && bit_match && outputs_match;
    report(
        9,
        "serialization",
        pass,
        format!("save-load-save identical {identical}, evaluate bit-match {bit_match}, outputs bit-match {outputs_match}"),
        start,
    );
    assert!(pass);
}

#[test]
fn c10_metrics() {
    let start = Instant::now();
    let a = Image::filled(64, 64, 0.5);
    let b = Image::filled(64, 64, 0.5625);
    let p = psnr(&a, &b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let textured = Image::from_fn(40, 40, |_, _| rng.random_range(0.0..1.0));
    let s = ssim(&textured, &textured).unwrap();
    let flat = vec![("flat".to_string(), Image::filled(128, 128, 0.5))];
    let id = evaluate(&Identity, &flat, TOY_SIGMA, 10).unwrap().mean_psnr();
    let pass = (p - 24.08).abs() <= 0.01 && s == 1.0 && (id - 20.17).abs() <= 0.3;
    report(
        10,
        "metrics",
        pass,
        format!("offset PSNR {p:.4} (24.08 +/-0.01), SSIM(a,a) {s}, identity at sigma 25 {id:.3} (20.17 +/-0.3)"),
        start,
    );
    assert!(pass);
}

#[test]
fn gradcheck_helper_flags_wrong_gradients() {
    let x = Tensor::from_vec(Shape([1, 1, 1, 2]), vec![0.3, -0.7]).unwrap();
    let r = Tensor::from_vec(Shape([1, 1, 1, 2]), vec![1.0, 2.0]).unwrap();
    assert!(gradcheck(std::slice::from_ref(&x), |g, v| readout(g, v[0], &r)) < 1e-8);
    let mut g = Graph::new();
    let v = g.leaf(x.with_requires_grad());
    let s = g.scale(v, 3.0);
    let l = readout(&mut g, s, &r);
    g.backward(l).unwrap();
    assert_eq!(g.grad(v).unwrap(), &[3.0, 6.0]);
}
