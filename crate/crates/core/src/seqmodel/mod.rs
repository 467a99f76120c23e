//! The autoregressive generator: bottom LSTM, Gaussian-window content
//! attention, latent prior, two-layer top LSTM and mixture-density head.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod gaussian;
pub mod lstm;
pub mod mdn;
pub mod model;
pub mod params;

pub use attention::{window_weights, BatchContent};
pub use checkpoint::{Checkpoint, OptimizerState};
pub use config::ModelConfig;
pub use gaussian::{kl_diag_gaussians, reparam_sample, GaussianDiag};
pub use mdn::{output_log_prob, sample_output, OutputDistParams, OutputSample};
pub use model::{prior, step, StepLatent, StepOutput, StepState, START_TOKEN};
pub use params::{registry, ModelParams, ParamVars, STYLE_BASIS};

use crate::tensor::Mat;

/// Value-level content attention for one sequence: returns `(a_t, κ, weights)`.
pub fn content_attention(
    window_raw: &[f64],
    kappa_prev: &[f64],
    content: &crate::synthglyph::ContentSequence,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = kappa_prev.len();
    assert_eq!(window_raw.len(), 3 * k, "window head is (α̂, β̂, κ̂)");
    let kappa: Vec<f64> = kappa_prev.iter().zip(&window_raw[2 * k..]).map(|(p, h)| p + h.exp()).collect();
    let w = window_weights(&window_raw[..k], &window_raw[k..2 * k], &kappa, content.len());
    let one_hot: Mat = content.one_hot();
    let mut a = vec![0.0; content.alphabet_size];
    for (u, wu) in w.iter().enumerate() {
        for (ai, c) in a.iter_mut().zip(one_hot.row(u)) {
            *ai += wu * c;
        }
    }
    (a, kappa, w)
}
