//! Noise synthesis, augmentation, the two training stages, image quality
//! metrics and evaluation.

use std::fmt;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::Graph;
use crate::csconv::ClassMap;
use crate::csdn::Csdn;
use crate::error::{config_err, shape_err, Error, Result};
use crate::optim::{adam_step, AdamState, StepDecay};
use crate::pcn::{pcn_loss, Pcn};
use crate::raster::Image;
use crate::stats::{compute_stats, gaussian_taps, hash_classes, GradientStatsMap, HashConfig};
use crate::tensor::{Shape, Tensor};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Adds i.i.d. `N(0, (sigma / 255)^2)` noise. The result is not clipped.
pub fn add_awgn(img: &Image, sigma: f64, rng: &mut impl Rng) -> Image {
    if sigma == 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma / 255.0).expect("finite sigma");
    let data = img.data().iter().map(|v| v + normal.sample(rng)).collect();
    Image::new(img.height(), img.width(), data).expect("same size")
}

/// One of the eight dihedral transforms: rotation by `90 * (id % 4)` degrees
/// counter-clockwise, then a horizontal flip when `id >= 4`.
pub fn augment_patch(img: &Image, id: u8) -> Result<Image> {
    if id > 7 {
        return config_err(format!("transform id {id} outside 0..8"));
    }
    let rot = id % 4;
    if rot % 2 == 1 && img.height() != img.width() {
        return shape_err(format!(
            "rotation by {} degrees needs a square patch, got {}x{}",
            90 * rot,
            img.height(),
            img.width()
        ));
    }
    let (h, w) = (img.height(), img.width());
    let rotated = match rot {
        0 => img.clone(),
        1 => Image::from_fn(w, h, |y, x| img.get(x, w - 1 - y)),
        2 => Image::from_fn(h, w, |y, x| img.get(h - 1 - y, w - 1 - x)),
        _ => Image::from_fn(w, h, |y, x| img.get(h - 1 - x, y)),
    };
    if id >= 4 {
        let (rh, rw) = (rotated.height(), rotated.width());
        Ok(Image::from_fn(rh, rw, |y, x| rotated.get(y, rw - 1 - x)))
    } else {
        Ok(rotated)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Noise level on the 8-bit scale.
    pub sigma: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub schedule: StepDecay,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma: 25.0,
            batch_size: 4,
            patch_size: 96,
            epochs: 100,
            steps_per_epoch: 200,
            schedule: StepDecay::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for the procedural corpus: small patches, larger steps.
    pub fn toy(steps: usize, seed: u64) -> Self {
        TrainConfig {
            patch_size: 48,
            epochs: 10,
            steps_per_epoch: steps.div_ceil(10),
            schedule: StepDecay {
                initial: 1e-3,
                factor: 0.5,
                every: 5,
            },
            seed,
            ..Default::default()
        }
    }

    fn validate(&self, images: &[Image], size_multiple: usize) -> Result<()> {
        if images.is_empty() {
            return config_err("training set is empty");
        }
        if !(self.sigma >= 0.0) {
            return config_err(format!("sigma {} must be non-negative", self.sigma));
        }
        if self.batch_size == 0 || self.patch_size == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return config_err("batch size, patch size, epochs and steps must be positive");
        }
        if !self.patch_size.is_multiple_of(size_multiple) {
            return config_err(format!("patch size {} not a multiple of {size_multiple}", self.patch_size));
        }
        if let Some(im) = images.iter().find(|im| im.height() < self.patch_size || im.width() < self.patch_size) {
            return config_err(format!(
                "image {}x{} smaller than patch size {}",
                im.height(),
                im.width(),
                self.patch_size
            ));
        }
        Ok(())
    }
}

/// Mean training loss of each epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn first(&self) -> f64 {
        self.epoch_losses[0]
    }
    pub fn last(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

/// A random augmented clean patch and its noisy version.
fn sample_patch(images: &[Image], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(Image, Image)> {
    let im = &images[rng.random_range(0..images.len())];
    let p = cfg.patch_size;
    let top = rng.random_range(0..=im.height() - p);
    let left = rng.random_range(0..=im.width() - p);
    let clean = augment_patch(&im.crop(top, left, p, p)?, rng.random_range(0..8))?;
    let noisy = add_awgn(&clean, cfg.sigma, rng);
    Ok((clean, noisy))
}

fn stack_channels(parts: &[Tensor]) -> Result<Tensor> {
    let s = parts[0].shape();
    let mut data = Vec::with_capacity(parts.len() * s.numel());
    for p in parts {
        data.extend_from_slice(p.values());
    }
    Tensor::from_vec(Shape::new(parts.len(), s.c(), s.h(), s.w()), data)
}

/// Trains `pcn` to regress clean-image statistics from noisy patches.
pub fn train_pcn(images: &[Image], cfg: &TrainConfig, pcn: &mut Pcn, hash: &HashConfig) -> Result<TrainReport> {
    cfg.validate(images, pcn.cfg.size_multiple())?;
    hash.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(pcn.net.params(), cfg.schedule.initial);
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        adam.learning_rate = cfg.schedule.lr_at(epoch);
        let mut total = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let mut noisy = Vec::with_capacity(cfg.batch_size);
            let mut targets = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let (clean, n) = sample_patch(images, cfg, &mut rng)?;
                targets.push(compute_stats(&clean, hash)?.to_targets());
                noisy.push(n);
            }
            let mut g = Graph::new();
            let x = g.constant(Image::stack(&noisy)?);
            let t = g.constant(stack_channels(&targets)?);
            let out = pcn.net.forward(&mut g, x, None, true)?;
            let loss = pcn_loss(&mut g, out, t)?;
            g.backward(loss)?;
            total += g.tensor(loss).item();
            let params = pcn.net.params_mut();
            params.zero_grad();
            g.accumulate_param_grads(params);
            adam_step(params, &mut adam)?;
        }
        report.epoch_losses.push(total / cfg.steps_per_epoch as f64);
    }
    Ok(report)
}

/// Source of class maps while training or running a denoiser.
#[derive(Debug, Clone, Copy)]
pub enum Classifier<'a> {
    /// A trained PCN on the noisy input.
    Pcn(&'a Pcn),
    /// Eigen-analysis of the noisy input.
    RaisrNoisy,
    /// Eigen-analysis of the clean image (training only).
    RaisrClean,
}

impl Classifier<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Classifier::Pcn(_) => "pcn",
            Classifier::RaisrNoisy => "raisr-noisy",
            Classifier::RaisrClean => "raisr-clean",
        }
    }

    /// Statistics for `noisy`; `clean` is used only by [`Classifier::RaisrClean`].
    pub fn stats(&self, noisy: &Image, clean: Option<&Image>, hash: &HashConfig) -> Result<GradientStatsMap> {
        match self {
            Classifier::Pcn(pcn) => pcn.predict(noisy),
            Classifier::RaisrNoisy => compute_stats(noisy, hash),
            Classifier::RaisrClean => match clean {
                Some(c) => compute_stats(c, hash),
                None => config_err("clean-image classification needs the clean image"),
            },
        }
    }

    pub fn classify(&self, noisy: &Image, clean: Option<&Image>, hash: &HashConfig) -> Result<ClassMap> {
        Ok(hash_classes(&self.stats(noisy, clean, hash)?, hash))
    }
}

fn check_class_count(csdn: &Csdn, hash: &HashConfig) -> Result<()> {
    if csdn.cfg.use_csconv && csdn.cfg.num_classes != hash.num_classes() {
        return Err(Error::ClassCount {
            classifier: hash.num_classes(),
            bank: csdn.cfg.num_classes,
        });
    }
    Ok(())
}

/// Trains the denoiser with class maps from `classifier`, whose parameters
/// are never touched.
pub fn train_csdn(
    images: &[Image],
    cfg: &TrainConfig,
    csdn: &mut Csdn,
    classifier: Classifier<'_>,
    hash: &HashConfig,
) -> Result<TrainReport> {
    let multiple = match classifier {
        Classifier::Pcn(p) => p.cfg.size_multiple(),
        _ => 1,
    };
    cfg.validate(images, multiple)?;
    hash.validate()?;
    check_class_count(csdn, hash)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(csdn.net.params(), cfg.schedule.initial);
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        adam.learning_rate = cfg.schedule.lr_at(epoch);
        let mut total = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let mut clean = Vec::with_capacity(cfg.batch_size);
            let mut noisy = Vec::with_capacity(cfg.batch_size);
            let mut maps = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let (c, n) = sample_patch(images, cfg, &mut rng)?;
                if csdn.cfg.use_csconv {
                    maps.push(classifier.classify(&n, Some(&c), hash)?);
                }
                clean.push(c);
                noisy.push(n);
            }
            let classes = if maps.is_empty() {
                None
            } else {
                Some(Rc::new(ClassMap::stack(&maps)?))
            };
            let mut g = Graph::new();
            let x = g.constant(Image::stack(&noisy)?);
            let y = g.constant(Image::stack(&clean)?);
            let out = csdn.net.forward(&mut g, x, classes, true)?;
            let loss = g.l1_loss(out, y)?;
            g.backward(loss)?;
            total += g.tensor(loss).item();
            let params = csdn.net.params_mut();
            params.zero_grad();
            g.accumulate_param_grads(params);
            adam_step(params, &mut adam)?;
        }
        report.epoch_losses.push(total / cfg.steps_per_epoch as f64);
    }
    Ok(report)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`] for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return shape_err("psnr: images differ in size");
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Weighted sums over every full `taps.len()`-square window.
fn window_means(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    const WINDOW: usize = 11;
    if a.height() != b.height() || a.width() != b.width() {
        return shape_err("ssim: images differ in size");
    }
    let (h, w) = (a.height(), a.width());
    if h < WINDOW || w < WINDOW {
        return shape_err(format!("ssim needs at least {WINDOW}x{WINDOW} pixels, got {h}x{w}"));
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let taps = gaussian_taps(WINDOW, 1.5);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = window_means(a.data(), h, w, &taps);
    let mu_b = window_means(b.data(), h, w, &taps);
    let aa = window_means(&prod(|x, _| x * x), h, w, &taps);
    let bb = window_means(&prod(|_, y| y * y), h, w, &taps);
    let ab = window_means(&prod(|x, y| x * y), h, w, &taps);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = aa[i] - ma * ma;
            let var_b = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            let num = (2.0 * (ma * mb) + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
            num / den
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Anything that maps a noisy image to a denoised one.
pub trait Denoiser {
    fn denoise(&self, noisy: &Image) -> Result<Image>;
}

/// Returns its input.
pub struct Identity;

impl Denoiser for Identity {
    fn denoise(&self, noisy: &Image) -> Result<Image> {
        Ok(noisy.clone())
    }
}

/// Classify, then run the denoiser on the resulting class map.
pub struct ClassifiedDenoiser<'a> {
    pub classifier: Classifier<'a>,
    pub csdn: &'a Csdn,
    pub hash: &'a HashConfig,
}

impl<'a> ClassifiedDenoiser<'a> {
    pub fn new(classifier: Classifier<'a>, csdn: &'a Csdn, hash: &'a HashConfig) -> Result<Self> {
        if matches!(classifier, Classifier::RaisrClean) {
            return config_err("clean-image classification is unavailable at test time");
        }
        check_class_count(csdn, hash)?;
        Ok(ClassifiedDenoiser { classifier, csdn, hash })
    }
}

impl Denoiser for ClassifiedDenoiser<'_> {
    fn denoise(&self, noisy: &Image) -> Result<Image> {
        let classes = if self.csdn.cfg.use_csconv {
            self.classifier.classify(noisy, None, self.hash)?
        } else {
            ClassMap::uniform(noisy.height(), noisy.width(), 1, 1)?
        };
        self.csdn.denoise(noisy, &classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub sigma: f64,
    pub psnr_noisy: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    fn mean(&self, f: impl Fn(&EvalRow) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }
    pub fn mean_psnr(&self) -> f64 {
        self.mean(|r| r.psnr)
    }
    pub fn mean_psnr_noisy(&self) -> f64 {
        self.mean(|r| r.psnr_noisy)
    }
    pub fn mean_ssim(&self) -> f64 {
        self.mean(|r| r.ssim)
    }

    /// Columns `image,sigma,psnr_noisy,psnr,ssim`, one row per image.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,sigma,psnr_noisy,psnr,ssim\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.4},{:.4},{:.6}\n",
                r.image, r.sigma, r.psnr_noisy, r.psnr, r.ssim
            ));
        }
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>6} {:>11} {:>9} {:>8}", "image", "sigma", "PSNR noisy", "PSNR", "SSIM")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<24} {:>6} {:>11.2} {:>9.2} {:>8.4}",
                r.image, r.sigma, r.psnr_noisy, r.psnr, r.ssim
            )?;
        }
        write!(
            f,
            "{:<24} {:>6} {:>11.2} {:>9.2} {:>8.4}",
            "mean",
            "",
            self.mean_psnr_noisy(),
            self.mean_psnr(),
            self.mean_ssim()
        )
    }
}

/// Adds noise to each image (seeded by `seed` and the image position),
/// denoises, clips to `[0, 1]` and scores against the clean image.
pub fn evaluate(denoiser: &dyn Denoiser, images: &[(String, Image)], sigma: f64, seed: u64) -> Result<EvalReport> {
    if images.is_empty() {
        return config_err("evaluation set is empty");
    }
    let mut rows = Vec::with_capacity(images.len());
    for (i, (name, clean)) in images.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let noisy = add_awgn(clean, sigma, &mut rng);
        let out = denoiser.denoise(&noisy)?.clipped();
        rows.push(EvalRow {
            image: name.clone(),
            sigma,
            psnr_noisy: psnr(&noisy.clipped(), clean)?,
            psnr: psnr(&out, clean)?,
            ssim: ssim(&out, clean)?,
        });
    }
    Ok(EvalReport { rows })
}
