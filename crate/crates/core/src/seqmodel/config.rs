use serde::{Deserialize, Serialize};

use super::mdn::head_width;
use crate::error::{Error, Result};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub alphabet_size: usize,
    pub bottom_dim: usize,
    pub top_dim: usize,
    pub z_dim: usize,
    /// Gaussian attention windows over the content.
    pub num_windows: usize,
    /// Bivariate mixture components of the output head.
    pub num_mixtures: usize,
    /// Output channels of the four style conv blocks; the input has 3.
    pub conv_channels: [usize; 4],
    /// Rows of the style basis (`k`).
    pub style_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Width of the projected style-attention output fed to the posterior.
    pub style_proj_dim: usize,
    pub prior_hidden: usize,
    /// Dropout after each conv nonlinearity (training only).
    pub conv_dropout: f64,
    /// Pen offsets are divided by this before entering the model.
    pub offset_scale: f64,
    /// Initial window advance per step, `exp(κ̂)` at zero input.
    pub init_window_step: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            alphabet_size: 10,
            bottom_dim: 64,
            top_dim: 64,
            z_dim: 32,
            num_windows: 10,
            num_mixtures: 10,
            conv_channels: [16, 32, 32, 64],
            style_dim: 16,
            heads: 4,
            head_dim: 16,
            style_proj_dim: 64,
            prior_hidden: 64,
            conv_dropout: 0.1,
            offset_scale: 0.2,
            init_window_step: 1.0 / 13.0,
        }
    }
}

impl ModelConfig {
    /// `s`, the width of a style feature frame.
    pub fn feature_dim(&self) -> usize {
        self.conv_channels[3]
    }

    pub fn head_width(&self) -> usize {
        head_width(self.num_mixtures)
    }

    /// Width of the style-attention query input `[h_bottom, a_t]`.
    pub fn query_input_dim(&self) -> usize {
        self.bottom_dim + self.alphabet_size
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("alphabet_size", self.alphabet_size),
            ("bottom_dim", self.bottom_dim),
            ("top_dim", self.top_dim),
            ("z_dim", self.z_dim),
            ("num_windows", self.num_windows),
            ("num_mixtures", self.num_mixtures),
            ("style_dim", self.style_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("style_proj_dim", self.style_proj_dim),
            ("prior_hidden", self.prior_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("model {name} must be positive")));
            }
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::invalid("conv channel widths must be positive"));
        }
        if self.style_dim > self.feature_dim() {
            return Err(Error::invalid(format!(
                "style_dim {} exceeds feature width {}",
                self.style_dim,
                self.feature_dim()
            )));
        }
        if !(0.0..1.0).contains(&self.conv_dropout) {
            return Err(Error::invalid("conv_dropout must be in [0, 1)"));
        }
        if !(self.offset_scale > 0.0 && self.init_window_step > 0.0) {
            return Err(Error::invalid("offset_scale and init_window_step must be positive"));
        }
        Ok(())
    }
}
