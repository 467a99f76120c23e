//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `SEQCKPT\0`, a little-endian `u32` format
//! version, a `u64` header length, a JSON header, then every tensor listed in
//! the header as little-endian `f64` in header order. The header stores the
//! SHA-256 of the tensor block, so truncation and bit flips are caught.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::Mat;

const MAGIC: &[u8; 8] = b"SEQCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Adam moments and the optimizer's own step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Mat>,
    pub v: BTreeMap<String, Mat>,
}

impl OptimizerState {
    pub fn zeros(params: &ModelParams) -> Self {
        let z: BTreeMap<String, Mat> = params.tensors.iter().map(|(k, m)| (k.clone(), Mat::zeros(m.rows, m.cols))).collect();
        Self { step: 0, m: z.clone(), v: z }
    }
}

/// How a trained model turns reference features into its style input.
#[derive(Clone, Debug, PartialEq)]
pub enum StyleSource {
    /// Reference features are used as they are.
    Direct,
    /// `M(anchor, φ(f_ref, anchor))` with a stored single-frame anchor.
    FixedAnchor(Mat),
    /// `M(ε, φ(f_ref, ε))` with fresh standard-normal frames `ε`.
    NoiseAnchor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Completed training steps.
    pub step: u64,
    pub optimizer: Option<OptimizerState>,
    pub style_source: StyleSource,
    /// Free-form provenance (training config, dataset hash, parent checkpoint).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    step: u64,
    optimizer_step: Option<u64>,
    style_source: String,
    tensors: Vec<TensorEntry>,
    body_sha256: String,
    meta: serde_json::Value,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format { what: "checkpoint", msg: msg.into() }
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Self { params, step: 0, optimizer: None, style_source: StyleSource::Direct, meta: serde_json::Value::Null }
    }

    fn sections(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = self.params.tensors.iter().map(|(k, m)| (k.clone(), m)).collect();
        if let StyleSource::FixedAnchor(a) = &self.style_source {
            out.push(("anchor".into(), a));
        }
        if let Some(o) = &self.optimizer {
            out.extend(o.m.iter().map(|(k, m)| (format!("adam.m/{k}"), m)));
            out.extend(o.v.iter().map(|(k, m)| (format!("adam.v/{k}"), m)));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let sections = self.sections();
        let mut body = Vec::with_capacity(sections.iter().map(|(_, m)| m.len() * 8).sum());
        for (_, m) in &sections {
            for v in &m.data {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            config: self.params.config.clone(),
            step: self.step,
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            style_source: match self.style_source {
                StyleSource::Direct => "direct",
                StyleSource::FixedAnchor(_) => "fixed_anchor",
                StyleSource::NoiseAnchor => "noise_anchor",
            }
            .into(),
            tensors: sections.iter().map(|(n, m)| TensorEntry { name: n.clone(), rows: m.rows, cols: m.cols }).collect(),
            body_sha256: hex::encode(Sha256::digest(&body)),
            meta: self.meta.clone(),
        };
        let hjson = serde_json::to_vec(&header).map_err(|e| fmt_err(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + hjson.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fmt_err("missing magic header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(fmt_err(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let hend = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| fmt_err("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..hend]).map_err(|e| fmt_err(e.to_string()))?;
        let body = &bytes[hend..];
        if hex::encode(Sha256::digest(body)) != header.body_sha256 {
            return Err(fmt_err("tensor block does not match its recorded hash"));
        }
        let expected: usize = header.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
        if expected != body.len() {
            return Err(fmt_err(format!("tensor block has {} bytes, header describes {expected}", body.len())));
        }
        let mut off = 0;
        let mut tensors = BTreeMap::new();
        let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
        let mut anchor = None;
        for t in &header.tensors {
            let n = t.rows * t.cols;
            let data = body[off..off + 8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            off += 8 * n;
            let mat = Mat::from_vec(t.rows, t.cols, data);
            if let Some(k) = t.name.strip_prefix("adam.m/") {
                m.insert(k.to_string(), mat);
            } else if let Some(k) = t.name.strip_prefix("adam.v/") {
                v.insert(k.to_string(), mat);
            } else if t.name == "anchor" {
                anchor = Some(mat);
            } else {
                tensors.insert(t.name.clone(), mat);
            }
        }
        let params = ModelParams { config: header.config, tensors };
        params.validate()?;
        let style_source = match (header.style_source.as_str(), anchor) {
            ("direct", None) => StyleSource::Direct,
            ("noise_anchor", None) => StyleSource::NoiseAnchor,
            ("fixed_anchor", Some(a)) => StyleSource::FixedAnchor(a),
            (s, _) => return Err(fmt_err(format!("inconsistent style source {s}"))),
        };
        let optimizer = match header.optimizer_step {
            Some(step) => {
                if m.len() != params.tensors.len() || v.len() != params.tensors.len() {
                    return Err(fmt_err("optimizer moments do not cover every parameter"));
                }
                Some(OptimizerState { step, m, v })
            }
            None => None,
        };
        Ok(Self { params, step: header.step, optimizer, style_source, meta: header.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
