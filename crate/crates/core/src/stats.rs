//! Local gradient statistics and the hash quantizer.
//!
//! Gradients feed a Gaussian-windowed structure tensor whose closed-form
//! eigen-decomposition gives orientation `phi`, strength `lambda` (the
//! dominant eigenvalue) and coherence `mu`. Binning the three yields a class
//! index in `1..=M_phi * M_lambda * M_mu`.

use std::f64::consts::PI;

use crate::csconv::ClassMap;
use crate::error::{config_err, shape_err, Result};
use crate::raster::Image;
use crate::tensor::{Shape, Tensor};

/// `sqrt(lambda1)` at which the normalized strength target saturates.
pub const STRENGTH_SCALE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct HashConfig {
    pub m_phi: usize,
    pub m_lambda: usize,
    pub m_mu: usize,
    pub strength_thresholds: Vec<f64>,
    pub coherence_thresholds: Vec<f64>,
    /// Structure-tensor window size (odd).
    pub window: usize,
    /// Gaussian sigma of the window weights.
    pub sigma_w: f64,
}

impl Default for HashConfig {
    fn default() -> Self {
        HashConfig {
            m_phi: 8,
            m_lambda: 3,
            m_mu: 3,
            strength_thresholds: vec![1e-4, 1e-3],
            coherence_thresholds: vec![0.25, 0.5],
            window: 9,
            sigma_w: 2.0,
        }
    }
}

fn ascending(v: &[f64]) -> bool {
    v.windows(2).all(|p| p[0] < p[1])
}

impl HashConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_phi == 0 || self.m_lambda == 0 || self.m_mu == 0 {
            return config_err("hash bin counts must be positive");
        }
        if self.strength_thresholds.len() != self.m_lambda - 1 || !ascending(&self.strength_thresholds) {
            return config_err(format!(
                "need {} strictly ascending strength thresholds, got {:?}",
                self.m_lambda - 1,
                self.strength_thresholds
            ));
        }
        if self.coherence_thresholds.len() != self.m_mu - 1
            || !ascending(&self.coherence_thresholds)
            || self.coherence_thresholds.iter().any(|&t| t <= 0.0 || t >= 1.0)
        {
            return config_err(format!(
                "need {} strictly ascending coherence thresholds in (0, 1), got {:?}",
                self.m_mu - 1,
                self.coherence_thresholds
            ));
        }
        if self.window.is_multiple_of(2) {
            return config_err(format!("structure tensor window {} must be odd", self.window));
        }
        if !(self.sigma_w > 0.0) {
            return config_err("window sigma must be positive");
        }
        Ok(())
    }

    /// Total class count `M`.
    pub fn num_classes(&self) -> usize {
        self.m_phi * self.m_lambda * self.m_mu
    }
}

/// Central differences `(-0.5, 0, 0.5)` with replicated borders.
pub fn image_gradients(img: &Image) -> Result<(Image, Image)> {
    let (h, w) = (img.height(), img.width());
    if h < 2 || w < 2 {
        return shape_err(format!("gradients need at least 2x2 pixels, got {h}x{w}"));
    }
    let gx = Image::from_fn(h, w, |y, x| {
        let (y, x) = (y as isize, x as isize);
        0.5 * (img.get_clamped(y, x + 1) - img.get_clamped(y, x - 1))
    });
    let gy = Image::from_fn(h, w, |y, x| {
        let (y, x) = (y as isize, x as isize);
        0.5 * (img.get_clamped(y + 1, x) - img.get_clamped(y - 1, x))
    });
    Ok((gx, gy))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

fn blur_separable(img: &Image, taps: &[f64]) -> Image {
    let r = (taps.len() / 2) as isize;
    let (h, w) = (img.height(), img.width());
    let rows = Image::from_fn(h, w, |y, x| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * img.get_clamped(y as isize, x as isize + i as isize - r))
            .sum()
    });
    Image::from_fn(h, w, |y, x| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * rows.get_clamped(y as isize + i as isize - r, x as isize))
            .sum()
    })
}

/// Per-pixel structure tensor `[[a, b], [b, d]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureTensor {
    pub a: Image,
    pub b: Image,
    pub d: Image,
}

/// Gaussian-weighted sums of `gx^2`, `gx gy`, `gy^2`, replicate border.
pub fn structure_tensor(gx: &Image, gy: &Image, window: usize, sigma_w: f64) -> Result<StructureTensor> {
    if window.is_multiple_of(2) {
        return config_err(format!("window {window} must be odd"));
    }
    if !(sigma_w > 0.0) {
        return config_err("window sigma must be positive");
    }
    if gx.height() != gy.height() || gx.width() != gy.width() {
        return shape_err("gx and gy differ in size");
    }
    let taps = gaussian_taps(window, sigma_w);
    let prod = |f: &dyn Fn(f64, f64) -> f64| {
        let data = gx.data().iter().zip(gy.data()).map(|(&x, &y)| f(x, y)).collect();
        Image::new(gx.height(), gx.width(), data).expect("same size")
    };
    Ok(StructureTensor {
        a: blur_separable(&prod(&|x, _| x * x), &taps),
        b: blur_separable(&prod(&|x, y| x * y), &taps),
        d: blur_separable(&prod(&|_, y| y * y), &taps),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenStats {
    pub lambda1: f64,
    pub lambda2: f64,
    pub phi: f64,
    pub mu: f64,
}

/// Closed-form analysis of `[[a, b], [b, d]]`. Isotropic tensors get `phi = 0`.
pub fn eigen_stats(a: f64, b: f64, d: f64) -> EigenStats {
    let mean = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    let radius = (half_diff * half_diff + b * b).sqrt();
    let lambda1 = (mean + radius).max(0.0);
    let lambda2 = (mean - radius).max(0.0);
    let mut phi = 0.5 * (2.0 * b).atan2(a - d);
    if phi < 0.0 {
        phi += PI;
    }
    if phi >= PI {
        phi = 0.0;
    }
    let (s1, s2) = (lambda1.sqrt(), lambda2.sqrt());
    let mu = if s1 + s2 > 0.0 { (s1 - s2) / (s1 + s2) } else { 0.0 };
    EigenStats {
        lambda1,
        lambda2,
        phi: phi + 0.0,
        mu,
    }
}

/// Per-pixel orientation, strength and coherence.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStatsMap {
    pub phi: Image,
    pub strength: Image,
    pub coherence: Image,
}

impl GradientStatsMap {
    pub fn height(&self) -> usize {
        self.phi.height()
    }
    pub fn width(&self) -> usize {
        self.phi.width()
    }

    /// Regression targets `(phi / pi, min(sqrt(lambda) / 0.2, 1), mu)` as a
    /// `(1, 3, H, W)` tensor.
    pub fn to_targets(&self) -> Tensor {
        let mut data = Vec::with_capacity(3 * self.phi.len());
        data.extend(self.phi.data().iter().map(|p| p / PI));
        data.extend(self.strength.data().iter().map(|l| (l.sqrt() / STRENGTH_SCALE).min(1.0)));
        data.extend_from_slice(self.coherence.data());
        Tensor::from_vec(Shape::new(1, 3, self.height(), self.width()), data).expect("stats shape")
    }

    /// Maps raw 3-channel predictions for batch item `n` back into valid
    /// statistics, clamping each channel to `[0, 1]` first.
    pub fn from_raw(raw: &Tensor, n: usize) -> Result<Self> {
        let s = raw.shape();
        if s.c() != 3 || n >= s.n() {
            return shape_err(format!("raw statistics need 3 channels and item {n}, got {s}"));
        }
        let unit = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        let phi = Image::from_tensor(raw, n, 0).map(|v| {
            let p = unit(v) * PI;
            if p >= PI {
                0.0
            } else {
                p
            }
        });
        let strength = Image::from_tensor(raw, n, 1).map(|v| (unit(v) * STRENGTH_SCALE).powi(2));
        let coherence = Image::from_tensor(raw, n, 2).map(unit);
        Ok(GradientStatsMap {
            phi,
            strength,
            coherence,
        })
    }

    /// Mean squared difference of the normalized targets over all pixels and
    /// the three channels.
    pub fn normalized_mse(&self, other: &GradientStatsMap) -> Result<f64> {
        let (a, b) = (self.to_targets(), other.to_targets());
        if a.shape() != b.shape() {
            return shape_err(format!("stats maps {} vs {}", a.shape(), b.shape()));
        }
        let sum: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(sum / a.numel() as f64)
    }
}

/// Number of thresholds strictly below `v`.
fn bin(v: f64, thresholds: &[f64]) -> usize {
    thresholds.iter().filter(|&&t| t < v).count()
}

/// Class index in `1..=M` for one `(phi, lambda, mu)` triple.
pub fn hash_class(phi: f64, lambda: f64, mu: f64, cfg: &HashConfig) -> u32 {
    let width = PI / cfg.m_phi as f64;
    let q_phi = (1..cfg.m_phi).filter(|&k| k as f64 * width <= phi).count();
    let q_lambda = bin(lambda, &cfg.strength_thresholds);
    let q_mu = bin(mu, &cfg.coherence_thresholds);
    (q_phi * cfg.m_lambda * cfg.m_mu + q_lambda * cfg.m_mu + q_mu + 1) as u32
}

pub fn hash_classes(stats: &GradientStatsMap, cfg: &HashConfig) -> ClassMap {
    let indices = stats
        .phi
        .data()
        .iter()
        .zip(stats.strength.data())
        .zip(stats.coherence.data())
        .map(|((&p, &l), &m)| hash_class(p, l, m, cfg))
        .collect();
    ClassMap::new(stats.height(), stats.width(), cfg.num_classes(), indices).expect("hash output in range")
}

/// Gradients, structure tensor and eigen-analysis of `img`.
pub fn compute_stats(img: &Image, cfg: &HashConfig) -> Result<GradientStatsMap> {
    let (gx, gy) = image_gradients(img)?;
    let st = structure_tensor(&gx, &gy, cfg.window, cfg.sigma_w)?;
    let (h, w) = (img.height(), img.width());
    let mut phi = Image::filled(h, w, 0.0);
    let mut strength = phi.clone();
    let mut coherence = phi.clone();
    for i in 0..h * w {
        let e = eigen_stats(st.a.data()[i], st.b.data()[i], st.d.data()[i]);
        phi.data_mut()[i] = e.phi;
        strength.data_mut()[i] = e.lambda1;
        coherence.data_mut()[i] = e.mu;
    }
    Ok(GradientStatsMap {
        phi,
        strength,
        coherence,
    })
}

pub fn compute_class_map(img: &Image, cfg: &HashConfig) -> Result<(GradientStatsMap, ClassMap)> {
    cfg.validate()?;
    let stats = compute_stats(img, cfg)?;
    let classes = hash_classes(&stats, cfg);
    Ok((stats, classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_zero_gradients() {
        let (gx, gy) = image_gradients(&Image::filled(5, 6, 0.4)).unwrap();
        assert!(gx.data().iter().chain(gy.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_gradient() {
        let w = 8;
        let img = Image::from_fn(4, w, |_, x| x as f64 / w as f64);
        let (gx, gy) = image_gradients(&img).unwrap();
        for y in 0..4 {
            for x in 1..w - 1 {
                assert!((gx.get(y, x) - 1.0 / w as f64).abs() < 1e-15);
            }
        }
        assert!(gy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_image_is_shape_error() {
        assert!(image_gradients(&Image::filled(1, 5, 0.0)).is_err());
    }

    #[test]
    fn constant_field_tensor() {
        let gx = Image::filled(6, 6, 1.0);
        let gy = Image::filled(6, 6, 0.0);
        let st = structure_tensor(&gx, &gy, 9, 2.0).unwrap();
        assert!(st.a.data().iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert!(st.b.data().iter().chain(st.d.data()).all(|&v| v == 0.0));
        assert!(structure_tensor(&gx, &gy, 8, 2.0).is_err());
    }

    #[test]
    fn eigen_examples() {
        let e = eigen_stats(1.0, 0.0, 1.0);
        assert_eq!((e.lambda1, e.lambda2, e.phi, e.mu), (1.0, 1.0, 0.0, 0.0));
        let e = eigen_stats(4.0, 0.0, 1.0);
        assert_eq!((e.lambda1, e.lambda2, e.phi), (4.0, 1.0, 0.0));
        assert!((e.mu - 1.0 / 3.0).abs() < 1e-15);
        let e = eigen_stats(2.0, 1.0, 2.0);
        assert!((e.lambda1 - 3.0).abs() < 1e-15 && (e.lambda2 - 1.0).abs() < 1e-15);
        assert!((e.phi - PI / 4.0).abs() < 1e-15);
        assert!((e.mu - (3f64.sqrt() - 1.0) / (3f64.sqrt() + 1.0)).abs() < 1e-15);
        assert_eq!(eigen_stats(0.0, 0.0, 0.0).mu, 0.0);
    }

    #[test]
    fn vertical_dominant_direction() {
        let e = eigen_stats(0.0, 0.0, 1.0);
        assert!((e.phi - PI / 2.0).abs() < 1e-15);
        assert_eq!(e.mu, 1.0);
    }

    #[test]
    fn hash_extremes() {
        let cfg = HashConfig::default();
        assert_eq!(cfg.num_classes(), 72);
        assert_eq!(hash_class(0.0, 0.0, 0.0, &cfg), 1);
        assert_eq!(hash_class(PI - 1e-12, 1.0, 1.0 - 1e-12, &cfg), 72);
        // thresholds count only when strictly below the value
        assert_eq!(hash_class(0.0, 1e-4, 0.25, &cfg), 1);
    }

    #[test]
    fn constant_image_all_class_one() {
        let (_, map) = compute_class_map(&Image::filled(12, 12, 0.7), &HashConfig::default()).unwrap();
        assert!(map.indices().iter().all(|&c| c == 1));
    }

    #[test]
    fn raw_round_trip_of_targets() {
        let img = Image::from_fn(10, 10, |y, x| ((x * x + 3 * y) % 7) as f64 / 70.0);
        let stats = compute_stats(&img, &HashConfig::default()).unwrap();
        assert!(stats.strength.data().iter().all(|l| l.sqrt() < STRENGTH_SCALE));
        let back = GradientStatsMap::from_raw(&stats.to_targets(), 0).unwrap();
        assert!(back.normalized_mse(&stats).unwrap() < 1e-28);
    }

    #[test]
    fn config_validation() {
        let mut cfg = HashConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.strength_thresholds = vec![1e-3, 1e-4];
        assert!(cfg.validate().is_err());
        let cfg = HashConfig {
            coherence_thresholds: vec![0.5],
            ..HashConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
