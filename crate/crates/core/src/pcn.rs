//! The pixel classification network: a small U-net of group convolution
//! blocks regressing normalized `(phi, lambda, mu)` from a noisy image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{config_err, Result};
use crate::network::{NetworkGraph, Node};
use crate::raster::Image;
use crate::stats::GradientStatsMap;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcnConfig {
    /// Channels carried between blocks.
    pub c_f: usize,
    pub num_scales: usize,
    /// Group residual blocks at the coarsest scale.
    pub grb_count: usize,
}

impl Default for PcnConfig {
    fn default() -> Self {
        PcnConfig {
            c_f: 12,
            num_scales: 3,
            grb_count: 3,
        }
    }
}

impl PcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_f == 0 || !self.c_f.is_multiple_of(4) {
            return config_err(format!("c_f = {} must be a positive multiple of 4", self.c_f));
        }
        if self.num_scales < 2 {
            return config_err(format!("num_scales = {} must be at least 2", self.num_scales));
        }
        Ok(())
    }

    /// Spatial extents must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.num_scales - 1)
    }
}

/// 3x3 group conv (2 groups) to `c_f / 2`, 1x1 conv to `c_f`, ReLU.
fn gcb(net: &mut NetworkGraph, name: &str, src: Node, c_f: usize, rng: &mut ChaCha8Rng) -> Node {
    let g = net.conv(&format!("{name}.group"), src, c_f / 2, 3, 2, rng);
    let p = net.conv(&format!("{name}.point"), g, c_f, 1, 1, rng);
    net.relu(&format!("{name}.relu"), p)
}

pub fn build_pcn(cfg: &PcnConfig, seed: u64) -> Result<NetworkGraph> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c_f = cfg.c_f;
    let (mut net, x) = NetworkGraph::new(1);
    let mut cur = net.conv("head", x, c_f, 1, 1, &mut rng);
    let mut skips = Vec::new();
    for s in 0..cfg.num_scales - 1 {
        let e = gcb(&mut net, &format!("enc{s}"), cur, c_f, &mut rng);
        skips.push(e);
        cur = net.avg_down(&format!("enc{s}.down"), e);
    }
    cur = gcb(&mut net, "bottleneck", cur, c_f, &mut rng);
    for i in 0..cfg.grb_count {
        let r = gcb(&mut net, &format!("grb{i}"), cur, c_f, &mut rng);
        cur = net.add(&format!("grb{i}.add"), cur, r);
    }
    for s in (0..cfg.num_scales - 1).rev() {
        let u = net.upsample(&format!("dec{s}.up"), cur);
        let c = net.concat(&format!("dec{s}.cat"), &[u, skips[s]]);
        cur = gcb(&mut net, &format!("dec{s}"), c, c_f, &mut rng);
    }
    net.conv("tail", cur, 3, 1, 1, &mut rng);
    Ok(net)
}

/// Sum of the three per-channel mean L1 terms.
pub fn pcn_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let mut total = None;
    for c in 0..3 {
        let p = g.narrow_channels(pred, c, 1)?;
        let t = g.narrow_channels(target, c, 1)?;
        let l = g.l1_loss(p, t)?;
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    Ok(total.expect("three channels"))
}

/// A built PCN with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Pcn {
    pub cfg: PcnConfig,
    pub net: NetworkGraph,
}

impl Pcn {
    pub fn new(cfg: PcnConfig, seed: u64) -> Result<Self> {
        Ok(Pcn {
            cfg,
            net: build_pcn(&cfg, seed)?,
        })
    }

    /// Raw 3-channel output for an image whose extents are already multiples
    /// of [`PcnConfig::size_multiple`].
    pub fn raw(&self, img: &Image) -> Result<Tensor> {
        self.net.infer(&img.to_tensor(), None)
    }

    /// Estimated statistics. The input is reflect-padded up to the next size
    /// multiple and the prediction cropped back.
    pub fn predict(&self, img: &Image) -> Result<GradientStatsMap> {
        let m = self.cfg.size_multiple();
        let (h, w) = (img.height(), img.width());
        let padded = img.reflect_pad(h.next_multiple_of(m), w.next_multiple_of(m))?;
        let stats = GradientStatsMap::from_raw(&self.raw(&padded)?, 0)?;
        Ok(GradientStatsMap {
            phi: stats.phi.crop(0, 0, h, w)?,
            strength: stats.strength.crop(0, 0, h, w)?,
            coherence: stats.coherence.crop(0, 0, h, w)?,
        })
    }
}
