//! Synthetic online handwriting with a known, parametric style.
//!
//! A sample is a row of single-stroke glyphs. Each glyph is its template
//! polyline resampled at a speed-dependent rate, sheared by the slant, scaled,
//! shifted vertically by the accumulated baseline drift, and perturbed by
//! seeded Gaussian jitter. Every glyph is followed by exactly one pen-up
//! sample placed at the glyph's last point.

pub mod dataset;
pub mod dtw;
pub mod oracle;
pub mod svg;
pub mod templates;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Mat;

pub use dataset::{make_dataset, DatasetConfig, DatasetManifest, Holdout, HoldoutMode, StyleSampler};
pub use oracle::{decode_content_oracle, fit_style_oracle, OracleGrid, StyleFit};
pub use templates::{builtin_templates, GlyphTemplate, NUM_TEMPLATES};

/// Template resampling rate at `speed = 1`, in samples per glyph.
pub const BASE_SAMPLES_PER_GLYPH: usize = 12;
/// Fewest samples a glyph is ever drawn with.
pub const MIN_SAMPLES_PER_GLYPH: usize = 4;
/// Horizontal distance between consecutive glyph boxes, before scaling.
pub const GLYPH_ADVANCE: f64 = 1.2;

/// The five style axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleParams {
    /// Shear angle in radians.
    pub slant: f64,
    pub scale: f64,
    pub speed: f64,
    pub jitter: f64,
    #[serde(rename = "drift")]
    pub baseline_drift: f64,
}

impl StyleParams {
    pub const SLANT_RANGE: (f64, f64) = (-0.5, 0.5);
    pub const SCALE_RANGE: (f64, f64) = (0.5, 2.0);
    pub const SPEED_RANGE: (f64, f64) = (0.5, 2.0);
    pub const JITTER_RANGE: (f64, f64) = (0.0, 0.05);
    pub const DRIFT_RANGE: (f64, f64) = (-0.05, 0.05);

    pub fn identity() -> Self {
        Self { slant: 0.0, scale: 1.0, speed: 1.0, jitter: 0.0, baseline_drift: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("slant", self.slant, Self::SLANT_RANGE),
            ("scale", self.scale, Self::SCALE_RANGE),
            ("speed", self.speed, Self::SPEED_RANGE),
            ("jitter", self.jitter, Self::JITTER_RANGE),
            ("drift", self.baseline_drift, Self::DRIFT_RANGE),
        ];
        for (name, v, (lo, hi)) in checks {
            if !(lo..=hi).contains(&v) {
                return Err(Error::invalid(format!("style {name}={v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Samples drawn per glyph at this speed.
    pub fn samples_per_glyph(&self) -> usize {
        ((BASE_SAMPLES_PER_GLYPH as f64 / self.speed).round() as usize).max(MIN_SAMPLES_PER_GLYPH)
    }
}

/// One pen sample. `pen = 1` while the pen touches the surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenSample {
    pub x: f64,
    pub y: f64,
    pub pen: u8,
}

/// Absolute pen trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct StrokeSequence {
    pub samples: Vec<PenSample>,
}

impl StrokeSequence {
    pub fn new(samples: Vec<PenSample>) -> Result<Self> {
        let s = Self { samples };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::invalid(format!("stroke sequence needs >= 2 samples, got {}", self.samples.len())));
        }
        if self.samples.iter().any(|s| !s.x.is_finite() || !s.y.is_finite() || s.pen > 1) {
            return Err(Error::invalid("stroke sequence has non-finite coordinates or a pen value outside {0,1}"));
        }
        if self.samples.last().map(|s| s.pen) != Some(0) {
            return Err(Error::invalid("stroke sequence must end pen-up"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Maximal pen-down runs, as point lists.
    pub fn pen_down_runs(&self) -> Vec<Vec<[f64; 2]>> {
        let mut runs = Vec::new();
        let mut cur: Vec<[f64; 2]> = Vec::new();
        for s in &self.samples {
            if s.pen == 1 {
                cur.push([s.x, s.y]);
            } else if !cur.is_empty() {
                runs.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            runs.push(cur);
        }
        runs
    }

    pub fn to_triplets(&self) -> Vec<[f64; 3]> {
        self.samples.iter().map(|s| [s.x, s.y, f64::from(s.pen)]).collect()
    }

    pub fn from_triplets(t: &[[f64; 3]]) -> Result<Self> {
        let samples = t
            .iter()
            .map(|p| {
                let pen = match p[2] {
                    v if v == 0.0 => 0,
                    v if v == 1.0 => 1,
                    v => return Err(Error::invalid(format!("pen value {v} is not 0 or 1"))),
                };
                Ok(PenSample { x: p[0], y: p[1], pen })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    /// Per-sample offsets `(dx, dy, pen)`; the first offset is relative to the origin.
    pub fn to_offsets(&self) -> Vec<[f64; 3]> {
        let mut prev = (0.0, 0.0);
        self.samples
            .iter()
            .map(|s| {
                let o = [s.x - prev.0, s.y - prev.1, f64::from(s.pen)];
                prev = (s.x, s.y);
                o
            })
            .collect()
    }

    /// Inverse of [`to_offsets`](Self::to_offsets) (without validation).
    pub fn from_offsets(offsets: &[[f64; 3]]) -> Self {
        let (mut x, mut y) = (0.0, 0.0);
        let samples = offsets
            .iter()
            .map(|o| {
                x += o[0];
                y += o[1];
                PenSample { x, y, pen: u8::from(o[2] > 0.5) }
            })
            .collect();
        Self { samples }
    }
}

/// A glyph-id sequence over an alphabet of `alphabet_size` symbols.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentSequence {
    pub symbols: Vec<usize>,
    pub alphabet_size: usize,
}

impl ContentSequence {
    pub fn new(symbols: Vec<usize>, alphabet_size: usize) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::invalid("content sequence is empty"));
        }
        if let Some(&bad) = symbols.iter().find(|&&s| s >= alphabet_size) {
            return Err(Error::invalid(format!("glyph id {bad} outside alphabet of size {alphabet_size}")));
        }
        Ok(Self { symbols, alphabet_size })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// `N × V` one-hot rows.
    pub fn one_hot(&self) -> Mat {
        let mut m = Mat::zeros(self.symbols.len(), self.alphabet_size);
        for (i, &s) in self.symbols.iter().enumerate() {
            m.set(i, s, 1.0);
        }
        m
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &ContentSequence) -> Result<ContentSequence> {
        if self.alphabet_size != other.alphabet_size {
            return Err(Error::invalid("cannot concatenate contents over different alphabets"));
        }
        let mut symbols = self.symbols.clone();
        symbols.extend_from_slice(&other.symbols);
        Ok(ContentSequence { symbols, alphabet_size: self.alphabet_size })
    }
}

/// A rendered sample with its generating inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub strokes: StrokeSequence,
    pub content: ContentSequence,
    pub style: StyleParams,
    pub seed: u64,
}

/// Renders `content` in `style`. Deterministic in `(content, style, seed)`.
pub fn render_sample(
    content: &ContentSequence,
    style: &StyleParams,
    seed: u64,
    templates: &[GlyphTemplate],
) -> Result<StrokeSequence> {
    if content.is_empty() {
        return Err(Error::invalid("content sequence is empty"));
    }
    style.validate()?;
    if let Some(&bad) = content.symbols.iter().find(|&&s| s >= templates.len()) {
        return Err(Error::invalid(format!("unknown glyph id {bad}")));
    }
    let n = style.samples_per_glyph();
    let shear = style.slant.tan();
    let mut noise_rng = rng::stream(seed, "jitter", 0);
    let jitter = Normal::new(0.0, style.jitter).map_err(|e| Error::invalid(e.to_string()))?;
    let mut samples = Vec::with_capacity(content.len() * (n + 1));
    for (i, &sym) in content.symbols.iter().enumerate() {
        let pts = templates::resample(&templates[sym].polyline, n);
        let x0 = i as f64 * GLYPH_ADVANCE;
        let dy = i as f64 * style.baseline_drift;
        for p in pts {
            let (gx, gy) = (p[0] + x0, p[1]);
            let mut x = style.scale * (gx + gy * shear);
            let mut y = style.scale * gy + dy;
            if style.jitter > 0.0 {
                x += jitter.sample(&mut noise_rng);
                y += jitter.sample(&mut noise_rng);
            }
            samples.push(PenSample { x, y, pen: 1 });
        }
        let last = *samples.last().expect("glyph has samples");
        samples.push(PenSample { pen: 0, ..last });
    }
    StrokeSequence::new(samples)
}
