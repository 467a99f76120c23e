//! Autoregressive generation: replication from a reference, interpolation
//! between two references, sampling from the prior, and the priming baseline.

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::rng;
use crate::seqmodel::attention::BatchContent;
use crate::seqmodel::checkpoint::StyleSource;
use crate::seqmodel::mdn::{sample_output, OutputDistParams};
use crate::seqmodel::model::{cell, check_finite, feature_batch, CellState, Latent, StepState, START_TOKEN};
use crate::seqmodel::{ModelParams, ParamVars};
use crate::styleeq::{self, StyleBasis, StyleFeatureSequence, StyleMemory};
use crate::synthglyph::{ContentSequence, PenSample, StrokeSequence, BASE_SAMPLES_PER_GLYPH};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    /// Multiplies every mixture-component standard deviation.
    pub std_scale: f64,
    pub max_frames: usize,
    /// Temperature of the mixture-weight draw.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { std_scale: 0.9, max_frames: 1000, temperature: 1.0, seed: 0 }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.std_scale > 0.0 && self.std_scale <= 1.5) {
            return Err(Error::invalid("std_scale must lie in (0, 1.5]"));
        }
        if self.max_frames == 0 {
            return Err(Error::invalid("max_frames must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        Ok(())
    }
}

/// Hard cap on generated frames for `n` symbols.
pub fn frame_cap(n: usize) -> usize {
    8 * n * BASE_SAMPLES_PER_GLYPH
}

/// A generated trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub strokes: StrokeSequence,
    /// Model-unit frames `(dx, dy, pen)` as sampled.
    pub frames: Vec<[f64; 3]>,
    /// The frame cap was hit before the stop bit fired.
    pub truncated: bool,
    /// Per step, the `H × T'` style-attention weights (posterior modes only).
    pub style_weights: Vec<Mat>,
}

/// Encodes a reference with dropout off, padding it to the encoder minimum.
pub fn encode_reference(params: &ModelParams, reference: &StrokeSequence) -> Result<StyleFeatureSequence> {
    let cfg = &params.config;
    let frames = styleeq::stroke_frames(reference, cfg.offset_scale);
    let padded = styleeq::pad_frames(&frames, styleeq::min_reference_len(cfg));
    let mut f = styleeq::conv_encode_frames(params, &padded)?;
    f.source_length = frames.rows;
    Ok(f)
}

/// Style input for a model trained with a synthetic `x'`: the reference is
/// moved onto the anchor with `M(anchor, φ(f_ref, anchor))`.
pub fn anchored_features(params: &ModelParams, source: &StyleSource, f_ref: StyleFeatureSequence, seed: u64) -> Result<StyleFeatureSequence> {
    let anchor = match source {
        StyleSource::Direct => return Ok(f_ref),
        StyleSource::FixedAnchor(a) => StyleFeatureSequence { frames: a.clone(), source_length: 1 },
        StyleSource::NoiseAnchor => {
            let mut r = rng::stream(seed, "gen.anchor", 0);
            StyleFeatureSequence { frames: rng::normal_mat(&mut r, f_ref.len(), f_ref.frames.cols), source_length: f_ref.source_length }
        }
    };
    let basis = StyleBasis::from_params(params);
    let delta = styleeq::phi(&f_ref, &anchor, &basis)?;
    styleeq::transform_m(&anchor, &delta, &basis)
}

/// `M(f_s, α · φ(f_t, f_s))`: the source features moved a fraction `α` of the
/// way toward the target's subspace mean.
pub fn interpolation_features(
    params: &ModelParams,
    f_source: &StyleFeatureSequence,
    f_target: &StyleFeatureSequence,
    alpha: f64,
) -> Result<StyleFeatureSequence> {
    let basis = StyleBasis::from_params(params);
    let delta = styleeq::phi(f_target, f_source, &basis)?;
    styleeq::transform_m(f_source, &delta.scaled(alpha), &basis)
}

fn check_content(params: &ModelParams, content: &ContentSequence) -> Result<()> {
    if content.is_empty() {
        return Err(Error::invalid("content must contain at least one symbol"));
    }
    if content.alphabet_size != params.config.alphabet_size {
        return Err(Error::invalid("content alphabet differs from the model alphabet"));
    }
    Ok(())
}

/// Incremental single-sequence roll-out on one growing graph.
struct Roller<'p> {
    params: &'p ModelParams,
    g: Graph,
    pv: ParamVars,
    content: BatchContent,
    st: CellState,
    memory: Option<StyleMemory>,
}

impl<'p> Roller<'p> {
    fn new(params: &'p ModelParams, content: &ContentSequence, features: Option<&StyleFeatureSequence>) -> Self {
        let mut g = Graph::new();
        let pv = ParamVars::load(&mut g, params, false);
        let st = CellState::zeros(&mut g, &params.config, 1);
        let memory = features.map(|f| {
            let fb = feature_batch(&mut g, f);
            styleeq::style_memory(&mut g, &pv, &fb)
        });
        Self { params, g, pv, content: BatchContent::new(&[content.one_hot()]), st, memory }
    }

    /// Advances one step; returns the output distribution and style weights.
    fn advance(&mut self, x_prev: [f64; 3], noise: &[f64], t: usize) -> Result<(OutputDistParams, Option<Mat>)> {
        let cfg = &self.params.config;
        let g = &mut self.g;
        let xv = g.constant(Mat::row_vector(x_prev.to_vec()));
        let nv = g.constant(Mat::row_vector(noise.to_vec()));
        let lat = match &self.memory {
            Some(m) => Latent::Posterior { memory: m, noise: nv },
            None => Latent::Prior { noise: nv },
        };
        let (next, out) = cell(g, &self.pv, cfg, &self.st, xv, &self.content, lat);
        check_finite(g, &next, out.raw, t)?;
        self.st = next;
        let w = out.style_weights.map(|w| {
            let tl = w.cols / cfg.heads;
            Mat::from_vec(cfg.heads, tl, w.data)
        });
        Ok((OutputDistParams::from_raw(&g.value(out.raw).data, cfg.num_mixtures), w))
    }

    fn state(&self, prev_output: [f64; 3]) -> StepState {
        StepState::from_graph(&self.g, &self.st, 0, prev_output)
    }

    /// Samples until the stop bit fires or the cap is reached.
    fn generate(&mut self, gcfg: &GenerationConfig, n_symbols: usize, mut x_prev: [f64; 3]) -> Result<Generation> {
        let cap = gcfg.max_frames.min(frame_cap(n_symbols));
        let z = self.params.config.z_dim;
        let mut frames = Vec::new();
        let mut weights = Vec::new();
        let mut truncated = true;
        for t in 0..cap {
            let noise = rng::normal_mat(&mut rng::stream(gcfg.seed, "gen.z", t as u64), 1, z).data;
            let (dist, w) = self.advance(x_prev, &noise, t)?;
            weights.extend(w);
            let s = sample_output(&dist, &mut rng::stream(gcfg.seed, "gen.sample", t as u64), gcfg.std_scale, gcfg.temperature);
            let frame = [s.offset[0], s.offset[1], f64::from(u8::from(s.pen))];
            frames.push(frame);
            x_prev = frame;
            if s.stop {
                truncated = false;
                break;
            }
        }
        Ok(Generation { strokes: frames_to_strokes(&frames, self.params.config.offset_scale), frames, truncated, style_weights: weights })
    }
}

/// Accumulates model-unit offsets into absolute coordinates. The final
/// sample is forced pen-up and a single frame is padded to two samples.
pub fn frames_to_strokes(frames: &[[f64; 3]], offset_scale: f64) -> StrokeSequence {
    let (mut x, mut y) = (0.0, 0.0);
    let mut samples: Vec<PenSample> = frames
        .iter()
        .map(|f| {
            x += f[0] * offset_scale;
            y += f[1] * offset_scale;
            PenSample { x, y, pen: u8::from(f[2] > 0.5) }
        })
        .collect();
    if samples.len() < 2 {
        let last = samples.last().copied().unwrap_or(PenSample { x: 0.0, y: 0.0, pen: 0 });
        samples.push(PenSample { pen: 0, ..last });
    }
    if let Some(l) = samples.last_mut() {
        l.pen = 0;
    }
    StrokeSequence { samples }
}

/// Generation driven by precomputed style features through the posterior.
pub fn generate_with_features(
    content: &ContentSequence,
    features: &StyleFeatureSequence,
    params: &ModelParams,
    gcfg: &GenerationConfig,
) -> Result<Generation> {
    gcfg.validate()?;
    check_content(params, content)?;
    if features.is_empty() {
        return Err(Error::invalid("style features are empty"));
    }
    Roller::new(params, content, Some(features)).generate(gcfg, content.len(), START_TOKEN)
}

/// Writes `content` in the style of `reference`; the features go straight
/// into style attention.
pub fn generate_replicate(
    content: &ContentSequence,
    reference: &StrokeSequence,
    params: &ModelParams,
    gcfg: &GenerationConfig,
) -> Result<Generation> {
    gcfg.validate()?;
    check_content(params, content)?;
    let f = encode_reference(params, reference)?;
    generate_with_features(content, &f, params, gcfg)
}

/// Replication for a model whose checkpoint names a non-direct style source.
pub fn generate_replicate_with_source(
    content: &ContentSequence,
    reference: &StrokeSequence,
    params: &ModelParams,
    source: &StyleSource,
    gcfg: &GenerationConfig,
) -> Result<Generation> {
    gcfg.validate()?;
    check_content(params, content)?;
    let f = anchored_features(params, source, encode_reference(params, reference)?, gcfg.seed)?;
    generate_with_features(content, &f, params, gcfg)
}

pub fn generate_interpolate(
    content: &ContentSequence,
    ref_source: &StrokeSequence,
    ref_target: &StrokeSequence,
    alpha: f64,
    params: &ModelParams,
    gcfg: &GenerationConfig,
) -> Result<Generation> {
    gcfg.validate()?;
    check_content(params, content)?;
    if !alpha.is_finite() {
        return Err(Error::invalid("alpha must be finite"));
    }
    let fs = encode_reference(params, ref_source)?;
    let ft = encode_reference(params, ref_target)?;
    let f = interpolation_features(params, &fs, &ft, alpha)?;
    generate_with_features(content, &f, params, gcfg)
}

/// Samples every `z_t` from the learned prior.
pub fn generate_from_prior(content: &ContentSequence, params: &ModelParams, gcfg: &GenerationConfig) -> Result<Generation> {
    gcfg.validate()?;
    check_content(params, content)?;
    Roller::new(params, content, None).generate(gcfg, content.len(), START_TOKEN)
}

/// A reference trajectory with its true content, for priming.
#[derive(Clone, Copy, Debug)]
pub struct Primer<'a> {
    pub strokes: &'a StrokeSequence,
    pub content: &'a ContentSequence,
}

fn preroll<'p>(
    content: &ContentSequence,
    primer: Option<Primer<'_>>,
    params: &'p ModelParams,
    seed: u64,
) -> Result<(Roller<'p>, [f64; 3], ContentSequence)> {
    let Some(p) = primer else {
        return Ok((Roller::new(params, content, None), START_TOKEN, content.clone()));
    };
    let full = p.content.concat(content)?;
    check_content(params, &full)?;
    let frames = styleeq::stroke_frames(p.strokes, params.config.offset_scale);
    let mut r = Roller::new(params, &full, None);
    let z = params.config.z_dim;
    let mut x_prev = START_TOKEN;
    for t in 0..frames.rows {
        let noise = rng::normal_mat(&mut rng::stream(seed, "prime.z", t as u64), 1, z).data;
        r.advance(x_prev, &noise, t)?;
        x_prev = frames.row(t).try_into().expect("3 columns");
    }
    Ok((r, x_prev, full))
}

/// State after teacher-forcing the primer (the initial state without one).
pub fn primed_state(content: &ContentSequence, primer: Option<Primer<'_>>, params: &ModelParams, seed: u64) -> Result<StepState> {
    check_content(params, content)?;
    let (r, x_prev, _) = preroll(content, primer, params, seed)?;
    Ok(r.state(x_prev))
}

/// The priming baseline: teacher-force `primer` through the model with
/// content `primer.content ++ content`, then continue sampling with prior `z`.
/// Only the continuation is returned.
pub fn generate_primed(
    content: &ContentSequence,
    primer: Option<Primer<'_>>,
    params: &ModelParams,
    gcfg: &GenerationConfig,
) -> Result<Generation> {
    gcfg.validate()?;
    check_content(params, content)?;
    let (mut r, x_prev, _) = preroll(content, primer, params, gcfg.seed)?;
    r.generate(gcfg, content.len(), x_prev)
}

/// One line of a generation manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub mode: String,
    pub content: Vec<usize>,
    pub reference_ids: Vec<String>,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub output_path: String,
    pub truncated: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::{ModelConfig, OutputDistParams};
    use crate::synthglyph::{builtin_templates, render_sample, StyleParams};

    fn small() -> ModelParams {
        let cfg = ModelConfig {
            bottom_dim: 8,
            top_dim: 8,
            z_dim: 4,
            num_mixtures: 2,
            conv_channels: [4, 4, 4, 8],
            style_dim: 3,
            heads: 2,
            head_dim: 2,
            style_proj_dim: 4,
            prior_hidden: 6,
            ..ModelConfig::default()
        };
        ModelParams::init(&cfg, 4).unwrap()
    }

    fn reference(sym: &[usize], slant: f64) -> StrokeSequence {
        let c = ContentSequence::new(sym.to_vec(), 10).unwrap();
        render_sample(&c, &StyleParams { slant, ..StyleParams::identity() }, 0, &builtin_templates()).unwrap()
    }

    fn gcfg(seed: u64) -> GenerationConfig {
        GenerationConfig { max_frames: 40, seed, ..GenerationConfig::default() }
    }

    #[test]
    fn replicate_is_deterministic_and_ends_pen_up() {
        let p = small();
        let c = ContentSequence::new(vec![1, 2], 10).unwrap();
        let r = reference(&[3, 4, 5], 0.2);
        let a = generate_replicate(&c, &r, &p, &gcfg(3)).unwrap();
        let b = generate_replicate(&c, &r, &p, &gcfg(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.strokes.samples.last().unwrap().pen, 0);
        assert!(a.frames.len() <= 40);
        assert_eq!(a.style_weights.len(), a.frames.len());
        let empty = ContentSequence { symbols: vec![], alphabet_size: 10 };
        assert!(generate_replicate(&empty, &r, &p, &gcfg(3)).is_err());
    }

    #[test]
    fn interpolation_endpoints() {
        let p = small();
        let fs = encode_reference(&p, &reference(&[1, 2], -0.3)).unwrap();
        let ft = encode_reference(&p, &reference(&[7, 8, 9], 0.3)).unwrap();
        assert_eq!(interpolation_features(&p, &fs, &ft, 0.0).unwrap(), fs);
        let one = interpolation_features(&p, &fs, &ft, 1.0).unwrap();
        let a = StyleBasis::from_params(&p).a;
        let mean = |f: &StyleFeatureSequence| {
            let af = f.frames.matmul(&a.transpose());
            (0..af.cols).map(|c| (0..af.rows).map(|r| af.get(r, c)).sum::<f64>() / af.rows as f64).collect::<Vec<_>>()
        };
        let d: Vec<f64> = mean(&ft).iter().zip(mean(&fs)).map(|(x, y)| x - y).collect();
        let shift = Mat::row_vector(d).matmul(&a);
        let mut direct = fs.frames.clone();
        for r in 0..direct.rows {
            for (x, s) in direct.row_mut(r).iter_mut().zip(&shift.data) {
                *x += s;
            }
        }
        assert_eq!(one.frames, direct);

        let c = ContentSequence::new(vec![0], 10).unwrap();
        let r_s = reference(&[1, 2], -0.3);
        let g0 = generate_interpolate(&c, &r_s, &reference(&[7, 8, 9], 0.3), 0.0, &p, &gcfg(5)).unwrap();
        assert_eq!(g0, generate_replicate(&c, &r_s, &p, &gcfg(5)).unwrap());
    }

    #[test]
    fn prior_and_empty_priming_agree() {
        let p = small();
        let c = ContentSequence::new(vec![4, 4], 10).unwrap();
        let a = generate_from_prior(&c, &p, &gcfg(8)).unwrap();
        assert_eq!(a, generate_from_prior(&c, &p, &gcfg(8)).unwrap());
        assert_eq!(generate_primed(&c, None, &p, &gcfg(8)).unwrap(), a);
        assert!(a.style_weights.is_empty());
    }

    #[test]
    fn priming_moves_the_state() {
        let p = small();
        let c = ContentSequence::new(vec![4], 10).unwrap();
        let rc = ContentSequence::new(vec![1, 2], 10).unwrap();
        let rs = reference(&[1, 2], 0.1);
        let fresh = primed_state(&c, None, &p, 0).unwrap();
        let primed = primed_state(&c, Some(Primer { strokes: &rs, content: &rc }), &p, 0).unwrap();
        assert!(fresh.distance(&primed) > 1e-3);
        assert!(primed.kappa.iter().all(|&k| k > 0.0));
    }

    #[test]
    fn std_scale_shrinks_sampled_offsets() {
        let mut raw = vec![0.0; 8];
        raw[3] = 0.4f64.ln(); // σx
        raw[4] = 1.5f64.ln(); // σy
        let d = OutputDistParams::from_raw(&raw, 1);
        let mut r = rng::stream(1, "t", 0);
        let n = 10_000;
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let s = sample_output(&d, &mut r, 0.9, 1.0);
            sx += s.offset[0] * s.offset[0];
            sy += s.offset[1] * s.offset[1];
        }
        let (ex, ey) = ((sx / n as f64).sqrt(), (sy / n as f64).sqrt());
        assert!((ex / (0.9 * 0.4) - 1.0).abs() < 0.03, "{ex}");
        assert!((ey / (0.9 * 1.5) - 1.0).abs() < 0.03, "{ey}");
    }

    #[test]
    fn config_validation() {
        assert!(GenerationConfig { std_scale: 0.0, ..GenerationConfig::default() }.validate().is_err());
        assert!(GenerationConfig { std_scale: 1.6, ..GenerationConfig::default() }.validate().is_err());
        assert!(GenerationConfig { max_frames: 0, ..GenerationConfig::default() }.validate().is_err());
        GenerationConfig::default().validate().unwrap();
    }
}
