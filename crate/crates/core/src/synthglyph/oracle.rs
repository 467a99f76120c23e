//! Brute-force template oracles: content decoding and style recovery.
//!
//! Both oracles segment a trajectory at pen-ups and compare every segment to
//! every template under a grid of shears (and, for style fitting, scales)
//! using DTW. Segments of a single sample carry no shape and are skipped.

use serde::{Deserialize, Serialize};

use super::dtw::{center, dtw_distance, normalize_rms, Point};
use super::templates::{resample, GlyphTemplate};
use super::{StrokeSequence, StyleParams, BASE_SAMPLES_PER_GLYPH};
use crate::error::{Error, Result};

/// Search grid of the oracles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleGrid {
    pub slant_step: f64,
    pub scale_step: f64,
}

impl Default for OracleGrid {
    fn default() -> Self {
        Self { slant_step: 0.02, scale_step: 0.05 }
    }
}

fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

impl OracleGrid {
    pub fn slants(&self) -> Vec<f64> {
        let (lo, hi) = StyleParams::SLANT_RANGE;
        axis(lo, hi, self.slant_step)
    }

    pub fn scales(&self) -> Vec<f64> {
        let (lo, hi) = StyleParams::SCALE_RANGE;
        axis(lo, hi, self.scale_step)
    }
}

/// Result of [`fit_style_oracle`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleFit {
    /// Recovered style. Jitter is not estimated and is reported as 0.
    pub style: StyleParams,
    /// Mean per-segment DTW distance at the optimum.
    pub residual: f64,
    /// Best template per segment at the optimum.
    pub symbols: Vec<usize>,
}

fn segments(strokes: &StrokeSequence) -> Result<Vec<Vec<Point>>> {
    let segs: Vec<Vec<Point>> = strokes.pen_down_runs().into_iter().filter(|r| r.len() >= 2).collect();
    if segs.is_empty() {
        return Err(Error::invalid("trajectory has no pen-down segment to analyse"));
    }
    Ok(segs)
}

fn shear(points: &[Point], slant: f64, scale: f64) -> Vec<Point> {
    let t = slant.tan();
    points.iter().map(|p| [scale * (p[0] + p[1] * t), scale * p[1]]).collect()
}

/// Decodes glyph ids, one per pen-down segment.
pub fn decode_content_oracle(
    strokes: &StrokeSequence,
    templates: &[GlyphTemplate],
    grid: &OracleGrid,
) -> Result<Vec<usize>> {
    let slants = grid.slants();
    let segs = segments(strokes)?;
    // Scale cancels under RMS normalization, so only the shear axis is searched.
    Ok(segs
        .iter()
        .map(|seg| {
            let target = normalize_rms(seg);
            let mut best = (f64::INFINITY, 0);
            for t in templates {
                let base = center(&resample(&t.polyline, seg.len()));
                for &s in &slants {
                    let d = dtw_distance(&target, &normalize_rms(&shear(&base, s, 1.0)));
                    if d < best.0 {
                        best = (d, t.symbol);
                    }
                }
            }
            best.1
        })
        .collect())
}

/// Recovers slant, scale, speed and drift by joint grid search.
pub fn fit_style_oracle(
    strokes: &StrokeSequence,
    templates: &[GlyphTemplate],
    grid: &OracleGrid,
) -> Result<StyleFit> {
    let segs = segments(strokes)?;
    let slants = grid.slants();
    let scales = grid.scales();
    let targets: Vec<Vec<Point>> = segs.iter().map(|s| center(s)).collect();
    // bases[seg][template]
    let bases: Vec<Vec<Vec<Point>>> = segs
        .iter()
        .map(|s| templates.iter().map(|t| center(&resample(&t.polyline, s.len()))).collect())
        .collect();

    let mut best = (f64::INFINITY, 0.0, 1.0, Vec::new());
    for &sl in &slants {
        for &sc in &scales {
            let mut total = 0.0;
            let mut picks = Vec::with_capacity(segs.len());
            for (target, per_template) in targets.iter().zip(&bases) {
                let mut seg_best = (f64::INFINITY, 0);
                for (t, base) in templates.iter().zip(per_template) {
                    let d = dtw_distance(target, &shear(base, sl, sc));
                    if d < seg_best.0 {
                        seg_best = (d, t.symbol);
                    }
                }
                total += seg_best.0;
                picks.push(seg_best.1);
            }
            let mean = total / segs.len() as f64;
            if mean < best.0 {
                best = (mean, sl, sc, picks);
            }
        }
    }
    let (residual, slant, scale, symbols) = best;

    let speed = segs.iter().map(|s| BASE_SAMPLES_PER_GLYPH as f64 / s.len() as f64).sum::<f64>() / segs.len() as f64;

    // Drift: least-squares slope of the vertical placement residual per glyph.
    let offsets: Vec<f64> = segs
        .iter()
        .zip(&symbols)
        .map(|(s, &sym)| {
            let model = shear(&resample(&templates[sym].polyline, s.len()), slant, scale);
            super::dtw::centroid(s)[1] - super::dtw::centroid(&model)[1]
        })
        .collect();
    let baseline_drift = if offsets.len() >= 2 {
        let n = offsets.len() as f64;
        let mean_i = (n - 1.0) / 2.0;
        let mean_y = offsets.iter().sum::<f64>() / n;
        let (num, den) = offsets.iter().enumerate().fold((0.0, 0.0), |(a, b), (i, y)| {
            let di = i as f64 - mean_i;
            (a + di * (y - mean_y), b + di * di)
        });
        num / den
    } else {
        0.0
    };

    Ok(StyleFit { style: StyleParams { slant, scale, speed, jitter: 0.0, baseline_drift }, residual, symbols })
}
