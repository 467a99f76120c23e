//! Trainable tensors and their canonical names.
//!
//! | name | shape |
//! |---|---|
//! | `bottom.w`, `bottom.b` | `(3 + V + Hb) × 4Hb`, `1 × 4Hb` |
//! | `window.w`, `window.b` | `Hb × 3K`, `1 × 3K` (α̂, β̂, κ̂ blocks) |
//! | `prior.w1`, `prior.b1` | `(Hb + V) × P`, `1 × P` |
//! | `prior.w2`, `prior.b2` | `P × 2z`, `1 × 2z` (mean, log std) |
//! | `top1.w`, `top1.b` | `(Hb + z + V + Ht) × 4Ht`, `1 × 4Ht` |
//! | `top2.w`, `top2.b` | `2Ht × 4Ht`, `1 × 4Ht` |
//! | `head.w`, `head.b` | `Ht × (6M + 2)`, `1 × (6M + 2)` |
//! | `conv{1..4}.w`, `conv{i}.b` | `3·C_in × C_out`, `1 × C_out` |
//! | `style.basis` | `k × s` |
//! | `attn.wq`, `attn.bq` | `(Hb + V) × H·d`, `1 × H·d` |
//! | `attn.wk`, `attn.bk`, `attn.wv`, `attn.bv` | `s × H·d`, `1 × H·d` |
//! | `attn.wo`, `attn.bo` | `H·d × Q`, `1 × Q` |
//! | `posterior.w`, `posterior.b` | `Q × 2z`, `1 × 2z` |

use std::collections::BTreeMap;

use rand::Rng as _;

use super::config::ModelConfig;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Mat;

pub const STYLE_BASIS: &str = "style.basis";

/// Every parameter name with its shape, in canonical order.
pub fn registry(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let (v, hb, ht, z) = (cfg.alphabet_size, cfg.bottom_dim, cfg.top_dim, cfg.z_dim);
    let hd = cfg.heads * cfg.head_dim;
    let s = cfg.feature_dim();
    let mut out: Vec<(String, (usize, usize))> = vec![
        ("bottom.w".into(), (3 + v + hb, 4 * hb)),
        ("bottom.b".into(), (1, 4 * hb)),
        ("window.w".into(), (hb, 3 * cfg.num_windows)),
        ("window.b".into(), (1, 3 * cfg.num_windows)),
        ("prior.w1".into(), (hb + v, cfg.prior_hidden)),
        ("prior.b1".into(), (1, cfg.prior_hidden)),
        ("prior.w2".into(), (cfg.prior_hidden, 2 * z)),
        ("prior.b2".into(), (1, 2 * z)),
        ("top1.w".into(), (hb + z + v + ht, 4 * ht)),
        ("top1.b".into(), (1, 4 * ht)),
        ("top2.w".into(), (2 * ht, 4 * ht)),
        ("top2.b".into(), (1, 4 * ht)),
        ("head.w".into(), (ht, cfg.head_width())),
        ("head.b".into(), (1, cfg.head_width())),
    ];
    let mut cin = 3;
    for (i, &cout) in cfg.conv_channels.iter().enumerate() {
        out.push((format!("conv{}.w", i + 1), (3 * cin, cout)));
        out.push((format!("conv{}.b", i + 1), (1, cout)));
        cin = cout;
    }
    out.extend([
        (STYLE_BASIS.to_string(), (cfg.style_dim, s)),
        ("attn.wq".into(), (cfg.query_input_dim(), hd)),
        ("attn.bq".into(), (1, hd)),
        ("attn.wk".into(), (s, hd)),
        ("attn.bk".into(), (1, hd)),
        ("attn.wv".into(), (s, hd)),
        ("attn.bv".into(), (1, hd)),
        ("attn.wo".into(), (hd, cfg.style_proj_dim)),
        ("attn.bo".into(), (1, cfg.style_proj_dim)),
        ("posterior.w".into(), (cfg.style_proj_dim, 2 * z)),
        ("posterior.b".into(), (1, 2 * z)),
    ]);
    out
}

/// All trainable tensors, keyed by canonical name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Mat>,
}

impl ModelParams {
    /// Seeded initialization: weights uniform in `±1/√fan_in`, biases zero,
    /// LSTM forget-gate biases 1, window biases set so that windows start
    /// unit-height, unit-sharpness and advance `init_window_step` per frame.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for (i, (name, (r, c))) in registry(config).into_iter().enumerate() {
            let mut rng = rng::stream(seed, "init", i as u64);
            let leaf = name.rsplit('.').next().unwrap_or_default();
            let m = if leaf.starts_with('b') && leaf != "basis" {
                Mat::zeros(r, c)
            } else {
                let bound = 1.0 / (r as f64).sqrt();
                Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-bound..bound)).collect())
            };
            tensors.insert(name, m);
        }
        for (name, hidden) in [("bottom.b", config.bottom_dim), ("top1.b", config.top_dim), ("top2.b", config.top_dim)] {
            let b = tensors.get_mut(name).expect("registered");
            for j in hidden..2 * hidden {
                b.data[j] = 1.0;
            }
        }
        let k = config.num_windows;
        let wb = tensors.get_mut("window.b").expect("registered");
        for j in 0..k {
            wb.data[2 * k + j] = config.init_window_step.ln();
        }
        let mut p = Self { config: config.clone(), tensors };
        p.normalize_basis_columns();
        Ok(p)
    }

    pub fn get(&self, name: &str) -> &Mat {
        self.tensors.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Mat {
        self.tensors.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Mat::len).sum()
    }

    /// Rescales every column of the style basis to unit Euclidean norm.
    pub fn normalize_basis_columns(&mut self) {
        let a = self.get_mut(STYLE_BASIS);
        for c in 0..a.cols {
            let norm = (0..a.rows).map(|r| a.get(r, c).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for r in 0..a.rows {
                    let v = a.get(r, c) / norm;
                    a.set(r, c, v);
                }
            }
        }
    }

    /// Checks names and shapes against the registry.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let reg = registry(&self.config);
        if reg.len() != self.tensors.len() {
            return Err(Error::invalid(format!("expected {} tensors, found {}", reg.len(), self.tensors.len())));
        }
        for (name, shape) in reg {
            match self.tensors.get(&name) {
                Some(m) if m.shape() == shape => {}
                Some(m) => return Err(Error::invalid(format!("{name} has shape {:?}, expected {shape:?}", m.shape()))),
                None => return Err(Error::invalid(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }
}

/// Parameters placed on a [`Graph`].
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Inserts every tensor, as trainable leaves or as constants.
    pub fn load(g: &mut Graph, params: &ModelParams, trainable: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|(name, m)| {
                let v = if trainable { g.param(m.clone()) } else { g.constant(m.clone()) };
                (name.clone(), v)
            })
            .collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
