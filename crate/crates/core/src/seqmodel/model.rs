//! One recurrent step of the generator, shared by training and generation.
//!
//! Wiring per step, for a batch of `B` sequences:
//!
//! ```text
//! h_b      = LSTM_b([x_prev, a_prev], h_b)
//! κ        = κ_prev + exp(κ̂),   a_t = window(h_b, κ) · c
//! prior    = FF(Swish)([h_b, a_t])
//! q        = posterior(style_attend([h_b, a_t], f''))
//! z_t      = mean + exp(log_std) ⊙ ε       (from q, or from the prior)
//! h_1      = LSTM_1([h_b, z_t, a_t], h_1)
//! h_2      = LSTM_2(h_1, h_2)
//! raw      = head(h_2)                      (6M + 2 wide)
//! ```

use serde::{Deserialize, Serialize};

use super::attention::{attend_content, gauss_window, BatchContent};
use super::config::ModelConfig;
use super::gaussian::GaussianDiag;
use super::lstm::lstm_cell;
use super::mdn::OutputDistParams;
use super::params::{ModelParams, ParamVars};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::styleeq::{self, FeatureBatch, FrameLayout, StyleFeatureSequence, StyleMemory};
use crate::synthglyph::ContentSequence;
use crate::tensor::Mat;

/// The fixed start token `(0, 0, pen-up)`.
pub const START_TOKEN: [f64; 3] = [0.0, 0.0, 0.0];

/// Recurrent state of a batch, as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub h_bottom: Var,
    pub c_bottom: Var,
    pub h1: Var,
    pub c1: Var,
    pub h2: Var,
    pub c2: Var,
    pub kappa: Var,
    pub a_prev: Var,
}

impl CellState {
    pub fn zeros(g: &mut Graph, cfg: &ModelConfig, batch: usize) -> Self {
        let mut z = |c| g.constant(Mat::zeros(batch, c));
        Self {
            h_bottom: z(cfg.bottom_dim),
            c_bottom: z(cfg.bottom_dim),
            h1: z(cfg.top_dim),
            c1: z(cfg.top_dim),
            h2: z(cfg.top_dim),
            c2: z(cfg.top_dim),
            kappa: z(cfg.num_windows),
            a_prev: z(cfg.alphabet_size),
        }
    }

    pub fn from_values(g: &mut Graph, s: &StepState) -> Self {
        let mut row = |v: &[f64]| g.constant(Mat::row_vector(v.to_vec()));
        Self {
            h_bottom: row(&s.h_bottom),
            c_bottom: row(&s.c_bottom),
            h1: row(&s.h_top[0]),
            c1: row(&s.c_top[0]),
            h2: row(&s.h_top[1]),
            c2: row(&s.c_top[1]),
            kappa: row(&s.kappa),
            a_prev: row(&s.prev_attended),
        }
    }
}

/// Where `z_t` comes from.
#[derive(Clone, Copy, Debug)]
pub enum Latent<'a> {
    /// `z = prior.mean + prior.std ⊙ noise`.
    Prior { noise: Var },
    /// `z = q.mean + q.std ⊙ noise` with `q` read from the style memory.
    Posterior { memory: &'a StyleMemory, noise: Var },
    Given(Var),
}

/// Nodes produced by one step.
#[derive(Clone, Debug)]
pub struct CellOut {
    pub raw: Var,
    pub prior: (Var, Var),
    pub posterior: Option<(Var, Var)>,
    pub z: Var,
    /// `[B × N]` content window weights.
    pub window: Var,
    /// `[B × H·t_max]` style-attention weights when the posterior ran.
    pub style_weights: Option<Mat>,
}

/// Advances the batch by one step.
pub fn cell(
    g: &mut Graph,
    pv: &ParamVars,
    cfg: &ModelConfig,
    st: &CellState,
    x_prev: Var,
    content: &BatchContent,
    latent: Latent<'_>,
) -> (CellState, CellOut) {
    let k = cfg.num_windows;
    let bin = g.concat_cols(&[x_prev, st.a_prev, st.h_bottom]);
    let bpre = g.linear(bin, pv.get("bottom.w"), pv.get("bottom.b"));
    let (h_b, c_b) = lstm_cell(g, bpre, st.c_bottom);

    let wout = g.linear(h_b, pv.get("window.w"), pv.get("window.b"));
    let alpha_hat = g.slice_cols(wout, 0, k);
    let beta_hat = g.slice_cols(wout, k, k);
    let kappa_hat = g.slice_cols(wout, 2 * k, k);
    let step = g.exp(kappa_hat);
    let kappa = g.add(st.kappa, step);
    let window = gauss_window(g, alpha_hat, beta_hat, kappa, content.max_len);
    let a_t = attend_content(g, window, content);

    let query = g.concat_cols(&[h_b, a_t]);
    let ph = g.linear(query, pv.get("prior.w1"), pv.get("prior.b1"));
    let ph = g.swish(ph);
    let pout = g.linear(ph, pv.get("prior.w2"), pv.get("prior.b2"));
    let prior = (g.slice_cols(pout, 0, cfg.z_dim), g.slice_cols(pout, cfg.z_dim, cfg.z_dim));

    let (z, posterior, style_weights) = match latent {
        Latent::Prior { noise } => (super::gaussian::reparam_graph(g, prior.0, prior.1, noise), None, None),
        Latent::Posterior { memory, noise } => {
            let (att, w) = styleeq::style_attend(g, pv, cfg, query, memory);
            let q = styleeq::posterior(g, pv, cfg, att);
            (super::gaussian::reparam_graph(g, q.0, q.1, noise), Some(q), Some(w))
        }
        Latent::Given(z) => (z, None, None),
    };

    let t1in = g.concat_cols(&[h_b, z, a_t, st.h1]);
    let t1pre = g.linear(t1in, pv.get("top1.w"), pv.get("top1.b"));
    let (h1, c1) = lstm_cell(g, t1pre, st.c1);
    let t2in = g.concat_cols(&[h1, st.h2]);
    let t2pre = g.linear(t2in, pv.get("top2.w"), pv.get("top2.b"));
    let (h2, c2) = lstm_cell(g, t2pre, st.c2);
    let raw = g.linear(h2, pv.get("head.w"), pv.get("head.b"));

    let next = CellState { h_bottom: h_b, c_bottom: c_b, h1, c1, h2, c2, kappa, a_prev: a_t };
    (next, CellOut { raw, prior, posterior, z, window, style_weights })
}

/// Encodes style features as a one-element constant batch.
pub fn feature_batch(g: &mut Graph, features: &StyleFeatureSequence) -> FeatureBatch {
    let n = features.len();
    FeatureBatch { frames: g.constant(features.frames.clone()), layout: FrameLayout { t_max: n, lens: vec![n] } }
}

/// Per-sequence recurrent state with plain vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepState {
    pub h_bottom: Vec<f64>,
    pub c_bottom: Vec<f64>,
    pub h_top: [Vec<f64>; 2],
    pub c_top: [Vec<f64>; 2],
    /// Window centres, nondecreasing from step to step.
    pub kappa: Vec<f64>,
    pub prev_output: [f64; 3],
    pub prev_attended: Vec<f64>,
}

impl StepState {
    pub fn initial(cfg: &ModelConfig) -> Self {
        Self {
            h_bottom: vec![0.0; cfg.bottom_dim],
            c_bottom: vec![0.0; cfg.bottom_dim],
            h_top: [vec![0.0; cfg.top_dim], vec![0.0; cfg.top_dim]],
            c_top: [vec![0.0; cfg.top_dim], vec![0.0; cfg.top_dim]],
            kappa: vec![0.0; cfg.num_windows],
            prev_output: START_TOKEN,
            prev_attended: vec![0.0; cfg.alphabet_size],
        }
    }

    /// Reads row `b` of a batched graph state.
    pub fn from_graph(g: &Graph, st: &CellState, b: usize, prev_output: [f64; 3]) -> Self {
        let row = |v: Var| g.value(v).row(b).to_vec();
        Self {
            h_bottom: row(st.h_bottom),
            c_bottom: row(st.c_bottom),
            h_top: [row(st.h1), row(st.h2)],
            c_top: [row(st.c1), row(st.c2)],
            kappa: row(st.kappa),
            prev_output,
            prev_attended: row(st.a_prev),
        }
    }

    /// Euclidean distance over all recurrent vectors.
    pub fn distance(&self, other: &StepState) -> f64 {
        let parts = |s: &StepState| -> Vec<f64> {
            [&s.h_bottom, &s.c_bottom, &s.h_top[0], &s.h_top[1], &s.c_top[0], &s.c_top[1], &s.kappa, &s.prev_attended]
                .into_iter()
                .flatten()
                .copied()
                .collect()
        };
        parts(self).iter().zip(parts(other)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        [&self.h_bottom, &self.c_bottom, &self.h_top[0], &self.h_top[1], &self.c_top[0], &self.c_top[1], &self.kappa]
            .into_iter()
            .flatten()
            .all(|v| v.is_finite())
    }
}

/// Latent input of [`step`].
#[derive(Clone, Copy, Debug)]
pub enum StepLatent<'a> {
    Prior { noise: &'a [f64] },
    Posterior { features: &'a StyleFeatureSequence, noise: &'a [f64] },
    Given(&'a [f64]),
}

/// Everything [`step`] computes.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub dist: OutputDistParams,
    pub state: StepState,
    pub z: Vec<f64>,
    pub prior: GaussianDiag,
    pub posterior: Option<GaussianDiag>,
    pub window: Vec<f64>,
    /// `H × T'` style-attention weights when the posterior ran.
    pub style_weights: Option<Mat>,
}

fn gaussian_row(g: &Graph, (m, l): (Var, Var)) -> GaussianDiag {
    GaussianDiag { mean: g.value(m).data.clone(), log_std: g.value(l).data.clone() }
}

/// Checks every recurrent quantity and the raw head for non-finite values.
pub(crate) fn check_finite(g: &Graph, st: &CellState, raw: Var, step: usize) -> Result<()> {
    let named = [
        ("bottom state", st.h_bottom),
        ("bottom cell", st.c_bottom),
        ("window position", st.kappa),
        ("content attention", st.a_prev),
        ("top state", st.h2),
        ("output head", raw),
    ];
    for (term, v) in named {
        if !g.value(v).is_finite() {
            return Err(Error::NonFinite { term: term.into(), step });
        }
    }
    Ok(())
}

/// One pure generator step for a single sequence.
///
/// `x_prev` is the previous (normalized) output; the latent comes from the
/// prior, from the posterior over `features`, or is given directly.
pub fn step(
    params: &ModelParams,
    state: &StepState,
    x_prev: [f64; 3],
    latent: StepLatent<'_>,
    content: &ContentSequence,
) -> Result<StepOutput> {
    let cfg = &params.config;
    if content.is_empty() {
        return Err(Error::invalid("content must contain at least one symbol"));
    }
    if content.alphabet_size != cfg.alphabet_size {
        return Err(Error::invalid(format!(
            "content alphabet {} differs from model alphabet {}",
            content.alphabet_size, cfg.alphabet_size
        )));
    }
    let mut g = Graph::new();
    let pv = ParamVars::load(&mut g, params, false);
    let st = CellState::from_values(&mut g, state);
    let xp = g.constant(Mat::row_vector(x_prev.to_vec()));
    let bc = BatchContent::new(&[content.one_hot()]);
    let noise_row = |g: &mut Graph, n: &[f64]| -> Result<Var> {
        if n.len() != cfg.z_dim {
            return Err(Error::invalid(format!("latent noise has {} dims, expected {}", n.len(), cfg.z_dim)));
        }
        Ok(g.constant(Mat::row_vector(n.to_vec())))
    };
    let memory;
    let lat = match latent {
        StepLatent::Prior { noise } => Latent::Prior { noise: noise_row(&mut g, noise)? },
        StepLatent::Posterior { features, noise } => {
            if features.is_empty() {
                return Err(Error::invalid("style features are empty"));
            }
            let fb = feature_batch(&mut g, features);
            memory = styleeq::style_memory(&mut g, &pv, &fb);
            Latent::Posterior { memory: &memory, noise: noise_row(&mut g, noise)? }
        }
        StepLatent::Given(z) => Latent::Given(noise_row(&mut g, z)?),
    };
    let (next, out) = cell(&mut g, &pv, cfg, &st, xp, &bc, lat);
    check_finite(&g, &next, out.raw, 0)?;
    let style_weights = out.style_weights.map(|w| {
        let t = w.cols / cfg.heads;
        Mat::from_vec(cfg.heads, t, w.data)
    });
    Ok(StepOutput {
        dist: OutputDistParams::from_raw(&g.value(out.raw).data, cfg.num_mixtures),
        state: StepState::from_graph(&g, &next, 0, x_prev),
        z: g.value(out.z).data.clone(),
        prior: gaussian_row(&g, out.prior),
        posterior: out.posterior.map(|p| gaussian_row(&g, p)),
        window: g.value(out.window).data.clone(),
        style_weights,
    })
}

/// Value-level prior `p(z_t | h_bottom, a_t)`.
pub fn prior(params: &ModelParams, h_bottom: &[f64], a_t: &[f64]) -> GaussianDiag {
    let mut g = Graph::new();
    let pv = ParamVars::load(&mut g, params, false);
    let mut q = h_bottom.to_vec();
    q.extend_from_slice(a_t);
    let x = g.constant(Mat::row_vector(q));
    let cfg = &params.config;
    let ph = g.linear(x, pv.get("prior.w1"), pv.get("prior.b1"));
    let ph = g.swish(ph);
    let out = g.linear(ph, pv.get("prior.w2"), pv.get("prior.b2"));
    let d = &g.value(out).data;
    GaussianDiag { mean: d[..cfg.z_dim].to_vec(), log_std: d[cfg.z_dim..].to_vec() }
}
