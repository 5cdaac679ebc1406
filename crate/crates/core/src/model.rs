//! Model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CSDN"                magic
//! u32                   format version
//! u32, bytes            metadata: UTF-8 `key=value` lines
//! u32                   parameter count
//! per parameter: u64 value count, then that many f64
//! ```
//!
//! The metadata alone rebuilds the network; payloads then overwrite its
//! parameters in registration order.

use std::fs;
use std::path::Path;

use crate::csdn::{Csdn, CsdnConfig};
use crate::error::{Error, Result};
use crate::network::NetworkGraph;
use crate::pcn::{Pcn, PcnConfig};
use crate::stats::HashConfig;

pub const MAGIC: &[u8; 4] = b"CSDN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Pcn(Pcn),
    Csdn(Csdn),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Pcn(_) => "pcn",
            Model::Csdn(_) => "csdn",
        }
    }

    pub fn net(&self) -> &NetworkGraph {
        match self {
            Model::Pcn(p) => &p.net,
            Model::Csdn(c) => &c.net,
        }
    }

    fn net_mut(&mut self) -> &mut NetworkGraph {
        match self {
            Model::Pcn(p) => &mut p.net,
            Model::Csdn(c) => &mut c.net,
        }
    }
}

/// A network with the hash configuration it was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: Model,
    pub hash: HashConfig,
    pub seed: u64,
}

fn model_err<T>(section: impl Into<String>, message: impl Into<String>) -> Result<T> {
    Err(Error::Model {
        section: section.into(),
        message: message.into(),
    })
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl SavedModel {
    /// Metadata pairs in file order.
    pub fn metadata(&self) -> Vec<(&'static str, String)> {
        let mut m = vec![("kind", self.model.kind().to_string()), ("seed", self.seed.to_string())];
        match &self.model {
            Model::Pcn(p) => {
                m.push(("c_f", p.cfg.c_f.to_string()));
                m.push(("num_scales", p.cfg.num_scales.to_string()));
                m.push(("grb_count", p.cfg.grb_count.to_string()));
            }
            Model::Csdn(c) => {
                m.push(("arch", c.cfg.arch.to_string()));
                m.push(("num_blocks", c.cfg.num_blocks.to_string()));
                m.push(("num_features", c.cfg.num_features.to_string()));
                m.push(("use_csconv", c.cfg.use_csconv.to_string()));
                m.push(("num_classes", c.cfg.num_classes.to_string()));
                m.push(("image_skip", c.cfg.image_skip.to_string()));
                m.push(("carn_groups", c.cfg.carn_groups.to_string()));
            }
        }
        let h = &self.hash;
        m.push(("m_phi", h.m_phi.to_string()));
        m.push(("m_lambda", h.m_lambda.to_string()));
        m.push(("m_mu", h.m_mu.to_string()));
        m.push(("strength_thresholds", join(&h.strength_thresholds)));
        m.push(("coherence_thresholds", join(&h.coherence_thresholds)));
        m.push(("window", h.window.to_string()));
        m.push(("sigma_w", h.sigma_w.to_string()));
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta: String = self.metadata().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        let params = self.model.net().params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (_, p) in params.iter() {
            out.extend_from_slice(&(p.tensor.numel() as u64).to_le_bytes());
            for v in p.tensor.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return model_err("magic", "file does not start with CSDN");
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let len = r.u32("metadata")? as usize;
        let text = std::str::from_utf8(r.take(len, "metadata")?)
            .or_else(|_| model_err("metadata", "not valid UTF-8"))?;
        let meta = Metadata::parse(text)?;
        let mut saved = meta.rebuild()?;

        let count = r.u32("parameters")? as usize;
        let net = saved.model.net_mut();
        if count != net.params().len() {
            return model_err(
                "parameters",
                format!("file holds {count} parameters, architecture has {}", net.params().len()),
            );
        }
        let mut values = Vec::with_capacity(count);
        for (_, p) in net.params().iter() {
            let section = format!("parameter {}", p.name);
            let n = r.u64(&section)?;
            if n != p.tensor.numel() as u64 {
                return model_err(
                    section,
                    format!("length prefix says {n} values, architecture expects {}", p.tensor.numel()),
                );
            }
            let raw = r.take(8 * n as usize, &section)?;
            values.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            );
        }
        if r.pos != bytes.len() {
            return model_err("trailer", format!("{} unexpected bytes after payload", bytes.len() - r.pos));
        }
        net.load_values(values)?;
        Ok(saved)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => model_err(
                section,
                format!("needs {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
            ),
        }
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, section: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().expect("8 bytes")))
    }
}

/// Parsed `key=value` metadata.
pub struct Metadata {
    pairs: Vec<(String, String)>,
}

impl Metadata {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let Some((k, v)) = line.split_once('=') else {
                return model_err("metadata", format!("line `{line}` is not key=value"));
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Metadata { pairs })
    }

    fn raw(&self, key: &str) -> Result<&str> {
        match self.pairs.iter().find(|(k, _)| k == key) {
            Some((_, v)) => Ok(v),
            None => model_err("metadata", format!("missing key `{key}`")),
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse().or_else(|_| model_err("metadata", format!("bad value `{v}` for `{key}`")))
    }

    fn list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.raw(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| s.parse().or_else(|_| model_err("metadata", format!("bad number `{s}` in `{key}`"))))
            .collect()
    }

    fn rebuild(&self) -> Result<SavedModel> {
        let hash = HashConfig {
            m_phi: self.get("m_phi")?,
            m_lambda: self.get("m_lambda")?,
            m_mu: self.get("m_mu")?,
            strength_thresholds: self.list("strength_thresholds")?,
            coherence_thresholds: self.list("coherence_thresholds")?,
            window: self.get("window")?,
            sigma_w: self.get("sigma_w")?,
        };
        hash.validate()?;
        let seed = self.get("seed")?;
        let model = match self.raw("kind")? {
            "pcn" => {
                let cfg = PcnConfig {
                    c_f: self.get("c_f")?,
                    num_scales: self.get("num_scales")?,
                    grb_count: self.get("grb_count")?,
                };
                Model::Pcn(Pcn::new(cfg, seed)?)
            }
            "csdn" => {
                let cfg = CsdnConfig {
                    arch: self.raw("arch")?.parse()?,
                    num_blocks: self.get("num_blocks")?,
                    num_features: self.get("num_features")?,
                    use_csconv: self.get("use_csconv")?,
                    num_classes: self.get("num_classes")?,
                    image_skip: self.get("image_skip")?,
                    carn_groups: self.get("carn_groups")?,
                };
                Model::Csdn(Csdn::new(cfg, seed)?)
            }
            other => return model_err("metadata", format!("unknown model kind `{other}`")),
        };
        Ok(SavedModel { model, hash, seed })
    }
}

pub fn save_model(model: &SavedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    SavedModel::from_bytes(&fs::read(path)?)
}

/// Loads a PCN file, rejecting any other model kind.
pub fn load_pcn(path: impl AsRef<Path>) -> Result<(Pcn, HashConfig)> {
    let saved = load_model(path)?;
    match saved.model {
        Model::Pcn(p) => Ok((p, saved.hash)),
        other => Err(Error::ArchitectureMismatch {
            expected: "pcn".into(),
            found: other.kind().into(),
        }),
    }
}

/// Loads a denoiser file, rejecting any other model kind.
pub fn load_csdn(path: impl AsRef<Path>) -> Result<(Csdn, HashConfig)> {
    let saved = load_model(path)?;
    match saved.model {
        Model::Csdn(c) => Ok((c, saved.hash)),
        other => Err(Error::ArchitectureMismatch {
            expected: "csdn".into(),
            found: other.kind().into(),
        }),
    }
}
