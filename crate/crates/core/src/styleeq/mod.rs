//! Style encoder and the style-equalization pair.
//!
//! A reference trajectory is encoded by four `blur → conv(k=3, s=2) → Swish
//! → dropout` blocks into a feature sequence `f` (`T' × s`). Equalization
//! measures a style difference in the subspace spanned by the basis
//! `A (k × s)`:
//!
//! ```text
//! phi(f, f') = mean_t(A f_t) − mean_t(A f'_t)
//! M(f', δ)   = f'_t + Aᵀ δ       for every frame t
//! ```
//!
//! so `phi(f, f) = 0` and `M(f, 0) = f` hold exactly. The decoder reads the
//! (possibly transformed) features through multi-head attention whose query
//! comes from `[h_bottom, a_t]`, and a linear posterior head turns the
//! attended vector into `q(z_t | ·)`.

pub mod attend;
pub mod conv;

use rand::Rng as _;

pub use attend::FrameLayout;
pub use conv::{receptive_field, ConvLayerSpec};

use crate::autograd::{CustomOp, Graph, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::seqmodel::{ModelConfig, ModelParams, ParamVars, STYLE_BASIS};
use crate::synthglyph::StrokeSequence;
use crate::tensor::{gemm, Mat};

/// Encoder output for one reference.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleFeatureSequence {
    /// `T' × s`.
    pub frames: Mat,
    /// Input length `T` the frames were computed from.
    pub source_length: usize,
}

impl StyleFeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.rows
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows == 0
    }
}

/// The `k × s` basis of the style subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleBasis {
    pub a: Mat,
}

impl StyleBasis {
    pub fn from_params(p: &ModelParams) -> Self {
        Self { a: p.get(STYLE_BASIS).clone() }
    }

    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.a.cols).map(|c| (0..self.a.rows).map(|r| self.a.get(r, c).powi(2)).sum::<f64>().sqrt()).collect()
    }
}

/// A style difference in subspace coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleDelta {
    pub delta: Vec<f64>,
}

impl StyleDelta {
    pub fn scaled(&self, alpha: f64) -> Self {
        Self { delta: self.delta.iter().map(|d| alpha * d).collect() }
    }
}

/// Layers of the encoder stack.
pub fn encoder_stack(_cfg: &ModelConfig) -> [ConvLayerSpec; 4] {
    [ConvLayerSpec::BLURRED; 4]
}

/// Shortest reference the encoder accepts.
pub fn min_reference_len(cfg: &ModelConfig) -> usize {
    conv::min_input_len(&encoder_stack(cfg))
}

/// Normalized model frames `(dx / scale, dy / scale, pen)`.
pub fn stroke_frames(strokes: &StrokeSequence, offset_scale: f64) -> Mat {
    let offs = strokes.to_offsets();
    let mut m = Mat::zeros(offs.len(), 3);
    for (i, o) in offs.iter().enumerate() {
        m.row_mut(i).copy_from_slice(&[o[0] / offset_scale, o[1] / offset_scale, o[2]]);
    }
    m
}

/// Appends motionless pen-up frames up to `min_len`.
pub fn pad_frames(frames: &Mat, min_len: usize) -> Mat {
    if frames.rows >= min_len {
        return frames.clone();
    }
    let mut out = Mat::zeros(min_len, frames.cols);
    out.data[..frames.data.len()].copy_from_slice(&frames.data);
    out
}

fn time_mean(m: &Mat) -> Vec<f64> {
    let mut acc = vec![0.0; m.cols];
    for r in 0..m.rows {
        for (a, v) in acc.iter_mut().zip(m.row(r)) {
            *a += v;
        }
    }
    let n = m.rows as f64;
    acc.iter().map(|a| a / n).collect()
}

fn project(frames: &Mat, a: &Mat) -> Mat {
    let mut af = Mat::zeros(frames.rows, a.rows);
    gemm(1.0, frames, false, a, true, 0.0, &mut af);
    af
}

/// `δ = mean_t(A f_target) − mean_t(A f_source)`.
pub fn phi(f_target: &StyleFeatureSequence, f_source: &StyleFeatureSequence, basis: &StyleBasis) -> Result<StyleDelta> {
    if f_target.is_empty() || f_source.is_empty() {
        return Err(Error::invalid("phi needs non-empty feature sequences"));
    }
    let t = time_mean(&project(&f_target.frames, &basis.a));
    let s = time_mean(&project(&f_source.frames, &basis.a));
    Ok(StyleDelta { delta: t.iter().zip(&s).map(|(x, y)| x - y).collect() })
}

/// `f_source + Aᵀ δ` at every frame.
pub fn transform_m(f_source: &StyleFeatureSequence, delta: &StyleDelta, basis: &StyleBasis) -> Result<StyleFeatureSequence> {
    if delta.delta.len() != basis.a.rows || f_source.frames.cols != basis.a.cols {
        return Err(Error::invalid("style delta, basis and features disagree in shape"));
    }
    let d = Mat::row_vector(delta.delta.clone());
    let shift = d.matmul(&basis.a);
    let mut frames = f_source.frames.clone();
    for r in 0..frames.rows {
        for (x, s) in frames.row_mut(r).iter_mut().zip(&shift.data) {
            *x += s;
        }
    }
    Ok(StyleFeatureSequence { frames, source_length: f_source.source_length })
}

/// Hutchinson estimate of `tr((AᵀA)²)`: `(1/N) Σ ‖Aᵀ A z_i‖²`, `z_i ~ N(0, I_s)`.
pub fn trace_regularizer(basis: &StyleBasis, num_probes: usize, seed: u64) -> Result<f64> {
    if num_probes == 0 {
        return Err(Error::invalid("trace estimator needs at least one probe"));
    }
    let mut g = Graph::new();
    let a = g.constant(basis.a.clone());
    let v = trace_regularizer_graph(&mut g, a, num_probes, seed);
    Ok(g.scalar(v))
}

/// Probe matrix `[s × N]` used by the estimator for `seed`.
pub fn trace_probes(s: usize, num_probes: usize, seed: u64) -> Mat {
    let mut r = rng::stream(seed, "trace.probes", 0);
    rng::normal_mat(&mut r, s, num_probes)
}

/// Differentiable Hutchinson estimate.
pub fn trace_regularizer_graph(g: &mut Graph, a: Var, num_probes: usize, seed: u64) -> Var {
    let s = g.value(a).cols;
    let z = g.constant(trace_probes(s, num_probes, seed));
    let az = g.matmul(a, z);
    let ataz = g.matmul_t(a, true, az, false);
    let sq = g.sum_squares(ataz);
    g.scale(sq, 1.0 / num_probes as f64)
}

/// Exact `tr((AᵀA)²)`.
pub fn exact_trace_ata_squared(a: &Mat) -> f64 {
    let mut ata = Mat::zeros(a.cols, a.cols);
    gemm(1.0, a, true, a, false, 0.0, &mut ata);
    ata.sum_squares()
}

/// Style features of a padded batch on a graph.
#[derive(Clone, Debug)]
pub struct FeatureBatch {
    /// `[(B · t_max) × s]`.
    pub frames: Var,
    pub layout: FrameLayout,
}

/// Dropout configuration of one encoder call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dropout {
    Off,
    /// Inverted dropout with masks drawn from `seed`.
    On { rate: f64, seed: u64 },
}

/// Encodes a batch of frame sequences (each `T_b × 3`).
pub fn encode_batch(g: &mut Graph, pv: &ParamVars, cfg: &ModelConfig, inputs: &[Mat], dropout: Dropout) -> Result<FeatureBatch> {
    let stack = encoder_stack(cfg);
    let min = conv::min_input_len(&stack);
    let batch = inputs.len();
    if batch == 0 {
        return Err(Error::invalid("empty encoder batch"));
    }
    if let Some(short) = inputs.iter().find(|m| m.rows < min) {
        return Err(Error::TooShort { got: short.rows, min });
    }
    let t_in = inputs.iter().map(|m| m.rows).max().unwrap_or(0);
    let mut x = Mat::zeros(batch * t_in, 3);
    for (b, m) in inputs.iter().enumerate() {
        assert_eq!(m.cols, 3, "encoder frames are (dx, dy, pen)");
        x.data[b * t_in * 3..b * t_in * 3 + m.data.len()].copy_from_slice(&m.data);
    }
    let mut h = g.constant(x);
    let mut len = t_in;
    let mut lens: Vec<usize> = inputs.iter().map(|m| m.rows).collect();
    for (layer, spec) in stack.iter().enumerate() {
        let blurred = conv::blur(g, h, batch, len);
        let (cols, out_len) = conv::im2col(g, blurred, batch, len - 3);
        let w = pv.get(&format!("conv{}.w", layer + 1));
        let bias = pv.get(&format!("conv{}.b", layer + 1));
        let pre = g.linear(cols, w, bias);
        h = g.swish(pre);
        if let Dropout::On { rate, seed } = dropout {
            if rate > 0.0 {
                let (r, c) = g.value(h).shape();
                let mut mr = rng::stream(seed, "dropout", layer as u64);
                let keep = 1.0 - rate;
                let mask = Mat::from_vec(r, c, (0..r * c).map(|_| if mr.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect());
                let mv = g.constant(mask);
                h = g.mul(h, mv);
            }
        }
        len = out_len;
        for l in &mut lens {
            *l = spec.output_len(*l).expect("length checked against the minimum");
        }
    }
    Ok(FeatureBatch { frames: h, layout: FrameLayout { t_max: len, lens } })
}

/// Encodes a single stroke sequence with dropout off.
pub fn conv_encode(params: &ModelParams, strokes: &StrokeSequence) -> Result<StyleFeatureSequence> {
    conv_encode_frames(params, &stroke_frames(strokes, params.config.offset_scale))
}

/// Encodes one `T × 3` frame matrix with dropout off.
pub fn conv_encode_frames(params: &ModelParams, frames: &Mat) -> Result<StyleFeatureSequence> {
    let mut g = Graph::new();
    let pv = ParamVars::load(&mut g, params, false);
    let fb = encode_batch(&mut g, &pv, &params.config, std::slice::from_ref(frames), Dropout::Off)?;
    let n = fb.layout.lens[0];
    Ok(StyleFeatureSequence { frames: g.value(fb.frames).slice_rows(0, n), source_length: frames.rows })
}

struct SegmentMean {
    layout: FrameLayout,
}

impl CustomOp for SegmentMean {
    fn name(&self) -> &'static str {
        "segment_mean"
    }

    fn backward(&self, inputs: &[&Mat], _output: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let x = inputs[0];
        let mut gx = Mat::zeros(x.rows, x.cols);
        for (b, &n) in self.layout.lens.iter().enumerate() {
            let inv = 1.0 / n as f64;
            for t in 0..n {
                for (o, gv) in gx.row_mut(b * self.layout.t_max + t).iter_mut().zip(grad.row(b)) {
                    *o = gv * inv;
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Mean over each sequence's valid frames: `[(B·t_max) × c] → [B × c]`.
pub fn segment_mean(g: &mut Graph, x: Var, layout: &FrameLayout) -> Var {
    let xm = g.value(x);
    let mut out = Mat::zeros(layout.lens.len(), xm.cols);
    for (b, &n) in layout.lens.iter().enumerate() {
        let rows = xm.slice_rows(b * layout.t_max, n);
        out.row_mut(b).copy_from_slice(&time_mean(&rows));
    }
    g.custom(vec![x], out, Box::new(SegmentMean { layout: layout.clone() }))
}

struct RepeatRows {
    t_max: usize,
}

impl CustomOp for RepeatRows {
    fn name(&self) -> &'static str {
        "repeat_rows"
    }

    fn backward(&self, inputs: &[&Mat], _output: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let x = inputs[0];
        let mut gx = Mat::zeros(x.rows, x.cols);
        for b in 0..x.rows {
            for t in 0..self.t_max {
                for (o, gv) in gx.row_mut(b).iter_mut().zip(grad.row(b * self.t_max + t)) {
                    *o += gv;
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Repeats row `b` of `[B × c]` `t_max` times.
pub fn repeat_rows(g: &mut Graph, x: Var, t_max: usize) -> Var {
    let xm = g.value(x);
    let mut out = Mat::zeros(xm.rows * t_max, xm.cols);
    for b in 0..xm.rows {
        for t in 0..t_max {
            out.row_mut(b * t_max + t).copy_from_slice(xm.row(b));
        }
    }
    g.custom(vec![x], out, Box::new(RepeatRows { t_max }))
}

/// Batched `phi`: `[B × k]`.
pub fn phi_graph(g: &mut Graph, basis: Var, target: &FeatureBatch, source: &FeatureBatch) -> Var {
    let at = g.matmul_t(target.frames, false, basis, true);
    let mt = segment_mean(g, at, &target.layout);
    let a_s = g.matmul_t(source.frames, false, basis, true);
    let ms = segment_mean(g, a_s, &source.layout);
    g.sub(mt, ms)
}

/// Batched `M`: adds `Aᵀ δ_b` to every frame of sequence `b`.
pub fn transform_m_graph(g: &mut Graph, basis: Var, source: &FeatureBatch, delta: Var) -> FeatureBatch {
    let shift = g.matmul(delta, basis);
    let rep = repeat_rows(g, shift, source.layout.t_max);
    let frames = g.add(source.frames, rep);
    FeatureBatch { frames, layout: source.layout.clone() }
}

/// Keys and values of a feature batch, projected once per sequence.
#[derive(Clone, Debug)]
pub struct StyleMemory {
    pub keys: Var,
    pub values: Var,
    pub layout: FrameLayout,
}

pub fn style_memory(g: &mut Graph, pv: &ParamVars, features: &FeatureBatch) -> StyleMemory {
    let keys = g.linear(features.frames, pv.get("attn.wk"), pv.get("attn.bk"));
    let values = g.linear(features.frames, pv.get("attn.wv"), pv.get("attn.bv"));
    StyleMemory { keys, values, layout: features.layout.clone() }
}

/// Attends the style memory from `query_input = [h_bottom, a_t]` and projects
/// the concatenated heads; also returns the `[B × H·t_max]` weights.
pub fn style_attend(g: &mut Graph, pv: &ParamVars, cfg: &ModelConfig, query_input: Var, memory: &StyleMemory) -> (Var, Mat) {
    let q = g.linear(query_input, pv.get("attn.wq"), pv.get("attn.bq"));
    let (heads, w) = attend::multi_head_attention(g, q, memory.keys, memory.values, cfg.heads, &memory.layout);
    (g.linear(heads, pv.get("attn.wo"), pv.get("attn.bo")), w)
}

/// Linear posterior head: `(mean, log_std)`, each `[B × z]`.
pub fn posterior(g: &mut Graph, pv: &ParamVars, cfg: &ModelConfig, attended: Var) -> (Var, Var) {
    let out = g.linear(attended, pv.get("posterior.w"), pv.get("posterior.b"));
    (g.slice_cols(out, 0, cfg.z_dim), g.slice_cols(out, cfg.z_dim, cfg.z_dim))
}

/// Value-level posterior for one attended vector.
pub fn posterior_value(params: &ModelParams, attended: &[f64]) -> crate::seqmodel::GaussianDiag {
    let mut g = Graph::new();
    let pv = ParamVars::load(&mut g, params, false);
    let x = g.constant(Mat::row_vector(attended.to_vec()));
    let (m, l) = posterior(&mut g, &pv, &params.config, x);
    crate::seqmodel::GaussianDiag { mean: g.value(m).data.clone(), log_std: g.value(l).data.clone() }
}
