//! Style-equalized variational sequence generation on synthetic handwriting.
//!
//! Modules, bottom to top: [`tensor`] and [`autograd`] provide the numerics;
//! [`synthglyph`] generates labelled data and oracles; [`seqmodel`] holds the
//! generator; [`styleeq`] the style encoder and equalization; [`training`],
//! [`inference`] and [`evaluation`] drive them.

pub mod autograd;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod rng;
pub mod seqmodel;
pub mod styleeq;
pub mod synthglyph;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use seqmodel::{Checkpoint, GaussianDiag, ModelConfig, ModelParams, OutputDistParams, StepState};
pub use styleeq::{StyleBasis, StyleDelta, StyleFeatureSequence};
pub use synthglyph::{ContentSequence, GlyphTemplate, LabeledSample, PenSample, StrokeSequence, StyleParams};
pub use tensor::Mat;
