//! Denoising networks built on class-specific convolution: CS-EDSR and
//! CS-CARN, and their plain-convolution baselines.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::csconv::ClassMap;
use crate::error::{config_err, Error, Result};
use crate::network::{NetworkGraph, Node};
use crate::raster::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Edsr,
    Carn,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Edsr => "edsr",
            Arch::Carn => "carn",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "edsr" => Ok(Arch::Edsr),
            "carn" => Ok(Arch::Carn),
            other => config_err(format!("unknown architecture `{other}` (edsr | carn)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsdnConfig {
    pub arch: Arch,
    /// Residual blocks (EDSR only).
    pub num_blocks: usize,
    pub num_features: usize,
    pub use_csconv: bool,
    pub num_classes: usize,
    /// Add the input image to the output instead of the head features to
    /// the body output.
    pub image_skip: bool,
    /// Groups of the first convolution in CARN residual blocks.
    pub carn_groups: usize,
}

impl Default for CsdnConfig {
    fn default() -> Self {
        CsdnConfig {
            arch: Arch::Edsr,
            num_blocks: 16,
            num_features: 16,
            use_csconv: true,
            num_classes: 72,
            image_skip: false,
            carn_groups: 4,
        }
    }
}

impl CsdnConfig {
    pub fn edsr(num_blocks: usize, num_features: usize, use_csconv: bool) -> Self {
        CsdnConfig {
            num_blocks,
            num_features,
            use_csconv,
            ..Default::default()
        }
    }

    pub fn carn(num_features: usize, use_csconv: bool) -> Self {
        CsdnConfig {
            arch: Arch::Carn,
            num_features,
            use_csconv,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 || self.num_features == 0 || self.num_classes == 0 {
            return config_err("blocks, features and classes must all be positive");
        }
        if self.arch == Arch::Carn && (self.carn_groups == 0 || !self.num_features.is_multiple_of(self.carn_groups)) {
            return config_err(format!(
                "{} features not divisible into {} groups",
                self.num_features, self.carn_groups
            ));
        }
        Ok(())
    }
}

/// Second convolution of a residual block: class-specific or shared.
fn second_conv(net: &mut NetworkGraph, cfg: &CsdnConfig, name: &str, src: Node, rng: &mut ChaCha8Rng) -> Node {
    if cfg.use_csconv {
        net.csconv(name, src, cfg.num_features, 3, cfg.num_classes, rng)
    } else {
        net.conv(name, src, cfg.num_features, 3, 1, rng)
    }
}

fn edsr_body(net: &mut NetworkGraph, cfg: &CsdnConfig, head: Node, rng: &mut ChaCha8Rng) -> Node {
    let f = cfg.num_features;
    let mut cur = head;
    for b in 0..cfg.num_blocks {
        let c1 = net.conv(&format!("block{b}.conv1"), cur, f, 3, 1, rng);
        let a = net.prelu(&format!("block{b}.act"), c1);
        let c2 = second_conv(net, cfg, &format!("block{b}.conv2"), a, rng);
        cur = net.add(&format!("block{b}.add"), cur, c2);
    }
    if cfg.image_skip {
        cur
    } else {
        net.add("skip", cur, head)
    }
}

/// Group conv, PReLU, second conv, residual add.
fn efficient_block(net: &mut NetworkGraph, cfg: &CsdnConfig, name: &str, src: Node, rng: &mut ChaCha8Rng) -> Node {
    let g = net.conv(&format!("{name}.group"), src, cfg.num_features, 3, cfg.carn_groups, rng);
    let a = net.prelu(&format!("{name}.act"), g);
    let c = second_conv(net, cfg, &format!("{name}.conv2"), a, rng);
    net.add(&format!("{name}.add"), src, c)
}

/// Three units chained with cascading concatenation and 1x1 fusion.
fn cascade(
    net: &mut NetworkGraph,
    cfg: &CsdnConfig,
    name: &str,
    src: Node,
    rng: &mut ChaCha8Rng,
    unit: &mut dyn FnMut(&mut NetworkGraph, &str, Node, &mut ChaCha8Rng) -> Node,
) -> Node {
    let mut stack = src;
    let mut cur = src;
    for i in 0..3 {
        let b = unit(net, &format!("{name}.b{i}"), cur, rng);
        stack = net.concat(&format!("{name}.cat{i}"), &[stack, b]);
        cur = net.conv(&format!("{name}.fuse{i}"), stack, cfg.num_features, 1, 1, rng);
    }
    cur
}

fn carn_body(net: &mut NetworkGraph, cfg: &CsdnConfig, head: Node, rng: &mut ChaCha8Rng) -> Node {
    let mut block = |net: &mut NetworkGraph, name: &str, src: Node, rng: &mut ChaCha8Rng| {
        let mut eres = |net: &mut NetworkGraph, n: &str, s: Node, r: &mut ChaCha8Rng| efficient_block(net, cfg, n, s, r);
        cascade(net, cfg, name, src, rng, &mut eres)
    };
    let body = cascade(net, cfg, "cascade", head, rng, &mut block);
    if cfg.image_skip {
        body
    } else {
        net.add("skip", body, head)
    }
}

pub fn build_csdn(cfg: &CsdnConfig, seed: u64) -> Result<NetworkGraph> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut net, x) = NetworkGraph::new(1);
    let head = net.conv("head", x, cfg.num_features, 3, 1, &mut rng);
    let body = match cfg.arch {
        Arch::Edsr => edsr_body(&mut net, cfg, head, &mut rng),
        Arch::Carn => carn_body(&mut net, cfg, head, &mut rng),
    };
    let tail = net.conv("tail", body, 1, 3, 1, &mut rng);
    if cfg.image_skip {
        net.add("image_skip", tail, x);
    }
    Ok(net)
}

/// A built denoiser with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Csdn {
    pub cfg: CsdnConfig,
    pub net: NetworkGraph,
}

impl Csdn {
    pub fn new(cfg: CsdnConfig, seed: u64) -> Result<Self> {
        Ok(Csdn {
            cfg,
            net: build_csdn(&cfg, seed)?,
        })
    }

    /// Denoises `noisy`; `classes` is ignored when the network has no
    /// class-specific layers.
    pub fn denoise(&self, noisy: &Image, classes: &ClassMap) -> Result<Image> {
        let classes = self.cfg.use_csconv.then_some(classes);
        let out = self.net.infer(&noisy.to_tensor(), classes)?;
        Ok(Image::from_tensor(&out, 0, 0))
    }
}
