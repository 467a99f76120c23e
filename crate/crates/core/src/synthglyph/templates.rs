//! The built-in glyph alphabet.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A single-stroke glyph shape in the unit box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphTemplate {
    pub symbol: usize,
    pub polyline: Vec<[f64; 2]>,
    /// Glyphs are always followed by a pen lift.
    pub pen_lift_after: bool,
}

const SHAPES: [&[[f64; 2]]; 10] = [
    // 0: closed oval, drawn counter-clockwise from the top
    &[
        [0.5, 1.0],
        [0.25, 0.854],
        [0.15, 0.5],
        [0.25, 0.146],
        [0.5, 0.0],
        [0.75, 0.146],
        [0.85, 0.5],
        [0.75, 0.854],
        [0.5, 1.0],
    ],
    // 1
    &[[0.3, 0.75], [0.55, 1.0], [0.55, 0.5], [0.55, 0.0]],
    // 2
    &[[0.1, 0.8], [0.3, 1.0], [0.7, 1.0], [0.9, 0.75], [0.8, 0.5], [0.1, 0.0], [0.9, 0.0]],
    // 3
    &[[0.1, 0.9], [0.5, 1.0], [0.85, 0.8], [0.45, 0.55], [0.9, 0.3], [0.6, 0.0], [0.1, 0.1]],
    // 4
    &[[0.7, 0.0], [0.7, 1.0], [0.1, 0.3], [0.9, 0.3]],
    // 5
    &[[0.85, 1.0], [0.2, 1.0], [0.15, 0.55], [0.7, 0.6], [0.85, 0.3], [0.6, 0.0], [0.1, 0.1]],
    // 6
    &[[0.8, 0.95], [0.4, 0.8], [0.15, 0.4], [0.3, 0.0], [0.75, 0.1], [0.75, 0.45], [0.2, 0.4]],
    // 7
    &[[0.1, 1.0], [0.9, 1.0], [0.5, 0.5], [0.35, 0.0]],
    // 8
    &[[0.5, 0.5], [0.15, 0.8], [0.5, 1.0], [0.85, 0.8], [0.15, 0.2], [0.5, 0.0], [0.85, 0.2], [0.5, 0.5]],
    // 9
    &[[0.8, 0.6], [0.3, 0.55], [0.2, 0.85], [0.55, 1.0], [0.8, 0.8], [0.75, 0.3], [0.6, 0.0]],
];

/// Number of built-in templates.
pub const NUM_TEMPLATES: usize = SHAPES.len();

/// The built-in alphabet, indexed by symbol.
pub fn builtin_templates() -> Vec<GlyphTemplate> {
    SHAPES
        .iter()
        .enumerate()
        .map(|(symbol, pts)| GlyphTemplate { symbol, polyline: pts.to_vec(), pen_lift_after: true })
        .collect()
}

/// SHA-256 over the exact template coordinates; recorded in dataset manifests.
pub fn template_hash(templates: &[GlyphTemplate]) -> String {
    let mut h = Sha256::new();
    for t in templates {
        h.update((t.symbol as u64).to_le_bytes());
        for p in &t.polyline {
            h.update(p[0].to_le_bytes());
            h.update(p[1].to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// `n ≥ 2` points spaced uniformly by arc length, endpoints included.
pub fn resample(polyline: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    assert!(polyline.len() >= 2 && n >= 2);
    let mut cum = Vec::with_capacity(polyline.len());
    cum.push(0.0);
    for w in polyline.windows(2) {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cum.push(cum.last().copied().unwrap_or(0.0) + d);
    }
    let total = *cum.last().expect("non-empty");
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        if i == n - 1 {
            out.push(*polyline.last().expect("non-empty"));
            break;
        }
        let target = total * i as f64 / (n - 1) as f64;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < target {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let t = if span > 0.0 { (target - cum[seg]) / span } else { 0.0 };
        let (a, b) = (polyline[seg], polyline[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}
