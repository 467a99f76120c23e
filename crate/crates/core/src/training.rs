//! Training: the sequence ELBO with a style-equalized posterior input,
//! teacher-forcing noise and the basis regularizer, optimized with Adam.
//!
//! Per batch the objective is
//!
//! ```text
//! (1/B) Σ_b Σ_t [ −log p(x_t | z_t, x_<t + n, c) + KL(q_t ‖ p_t) ] + λ · tr̂((AᵀA)²)
//! ```
//!
//! where `q_t` attends over `M(f', φ(f, f'))` for an unrelated reference `x'`
//! (or over `f` itself when the batch is not equalized).

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::seqmodel::attention::BatchContent;
use crate::seqmodel::checkpoint::{Checkpoint, OptimizerState, StyleSource};
use crate::seqmodel::gaussian::kl_graph;
use crate::seqmodel::mdn::mixture_nll;
use crate::seqmodel::model::{cell, check_finite, CellState, Latent, START_TOKEN};
use crate::seqmodel::{ModelConfig, ModelParams, ParamVars, STYLE_BASIS};
use crate::styleeq::{self, Dropout, FeatureBatch, FrameLayout};
use crate::synthglyph::LabeledSample;
use crate::tensor::Mat;

/// Where the unrelated reference `x'` comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XPrimeMode {
    /// A uniform draw from the training set (the proposed method).
    RealSample,
    /// One persistent random feature frame, also used at inference.
    FixedVector,
    /// Fresh standard-normal feature frames every batch.
    RandomNoise,
    /// Always `x' = x`: no equalization.
    AlwaysSelf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Probability that a batch is equalized (`x' ≠ x`).
    pub equalize_fraction: f64,
    /// Replace the per-batch coin by a deterministic schedule hitting the
    /// same fraction.
    pub alternate_equalization: bool,
    /// Std of the Gaussian noise added to teacher-forced offsets.
    pub teacher_noise_std: f64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub trace_probes: usize,
    pub trace_weight: f64,
    pub grad_clip: f64,
    pub x_prime_mode: XPrimeMode,
    pub max_steps: u64,
    /// Validation period in steps; 0 disables.
    pub eval_every: u64,
    /// Checkpoint period in steps for drivers that save; 0 disables.
    pub checkpoint_every: u64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            equalize_fraction: 0.5,
            alternate_equalization: false,
            teacher_noise_std: 0.1,
            warmup_steps: 400,
            peak_lr: 1e-4,
            adam_betas: [0.9, 0.98],
            adam_eps: 1e-8,
            trace_probes: 100,
            trace_weight: 1.0,
            grad_clip: 5.0,
            x_prime_mode: XPrimeMode::RealSample,
            max_steps: 2000,
            eval_every: 0,
            checkpoint_every: 0,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.equalize_fraction) {
            return Err(Error::invalid("equalize_fraction must lie in [0, 1]"));
        }
        if !(self.teacher_noise_std >= 0.0) {
            return Err(Error::invalid("teacher_noise_std must be nonnegative"));
        }
        if self.warmup_steps == 0 {
            return Err(Error::invalid("warmup_steps must be at least 1"));
        }
        if !(self.peak_lr > 0.0) || self.trace_probes == 0 || !(self.grad_clip > 0.0) {
            return Err(Error::invalid("peak_lr, trace_probes and grad_clip must be positive"));
        }
        if self.adam_betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Format { what: "train config", msg: e.to_string() })?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// `peak · min(step / warmup, sqrt(warmup / step))`.
pub fn lr_schedule(step: u64, warmup: u64, peak_lr: f64) -> Result<f64> {
    if step == 0 || warmup == 0 {
        return Err(Error::invalid("learning-rate schedule is defined for step >= 1 and warmup >= 1"));
    }
    let (s, w) = (step as f64, warmup as f64);
    Ok(peak_lr * (s / w).min((w / s).sqrt()))
}

/// A sample in model units.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    /// `T × 3` normalized offsets `(dx, dy, pen)`.
    pub frames: Mat,
    /// Encoder input: `frames` padded to the encoder minimum.
    pub encoder_frames: Mat,
    /// `N × V` one-hot content.
    pub content: Mat,
    pub symbols: Vec<usize>,
}

impl TrainSample {
    pub fn from_labeled(s: &LabeledSample, cfg: &ModelConfig) -> Result<Self> {
        if s.content.alphabet_size != cfg.alphabet_size {
            return Err(Error::invalid("sample alphabet differs from model alphabet"));
        }
        let frames = styleeq::stroke_frames(&s.strokes, cfg.offset_scale);
        Ok(Self {
            encoder_frames: styleeq::pad_frames(&frames, styleeq::min_reference_len(cfg)),
            frames,
            content: s.content.one_hot(),
            symbols: s.content.symbols.clone(),
        })
    }
}

pub fn prepare(samples: &[LabeledSample], cfg: &ModelConfig) -> Result<Vec<TrainSample>> {
    samples.iter().map(|s| TrainSample::from_labeled(s, cfg)).collect()
}

/// The reference side of a batch.
#[derive(Clone, Debug)]
pub enum XPrime<'a> {
    /// `x' = x`; features enter the posterior unchanged.
    SelfRef,
    Samples(Vec<&'a TrainSample>),
    /// A `1 × s` feature frame shared by the batch.
    Anchor(Mat),
    /// Standard-normal frames with the targets' feature layout, from `seed`.
    Noise { seed: u64 },
}

/// Seeds of every random draw inside one loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossSeeds {
    pub teacher: u64,
    pub reparam: u64,
    /// `None` disables dropout.
    pub dropout: Option<u64>,
    pub probes: u64,
}

impl LossSeeds {
    pub fn for_step(seed: u64, step: u64) -> Self {
        Self {
            teacher: rng::derive(seed, "teacher", step),
            reparam: rng::derive(seed, "reparam", step),
            dropout: Some(rng::derive(seed, "dropout", step)),
            probes: rng::derive(seed, "probes", step),
        }
    }
}

/// Knobs of a loss evaluation that come from the training config.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub teacher_noise_std: f64,
    pub trace_probes: usize,
    pub trace_weight: f64,
}

impl From<&TrainConfig> for LossSettings {
    fn from(c: &TrainConfig) -> Self {
        Self { teacher_noise_std: c.teacher_noise_std, trace_probes: c.trace_probes, trace_weight: c.trace_weight }
    }
}

/// Summed loss terms of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub nll_sum: f64,
    pub kl_sum: f64,
    pub frames: usize,
    pub trace_reg: f64,
    pub loss: f64,
}

/// Training-step diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub nll_per_frame: f64,
    pub kl_per_frame: f64,
    pub trace_reg: f64,
    pub grad_norm: f64,
    pub clipped: bool,
    pub lr: f64,
    pub equalized: bool,
}

/// Held-out diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub step: u64,
    pub nll_per_frame: f64,
    pub kl_per_frame: f64,
    /// Validation KL has collapsed toward zero: the posterior carries almost
    /// no information, a sign the style path is being ignored or overfit.
    pub kl_collapsed: bool,
}

/// Per-frame KL below which validation flags a collapse.
pub const KL_COLLAPSE_THRESHOLD: f64 = 1e-3;

fn reference_features(
    g: &mut Graph,
    pv: &ParamVars,
    cfg: &ModelConfig,
    targets: &[&TrainSample],
    x_prime: &XPrime<'_>,
    dropout: Option<u64>,
) -> Result<FeatureBatch> {
    let drop = |label: &str| match dropout {
        Some(s) if cfg.conv_dropout > 0.0 => Dropout::On { rate: cfg.conv_dropout, seed: rng::derive(s, label, 0) },
        _ => Dropout::Off,
    };
    let enc: Vec<Mat> = targets.iter().map(|s| s.encoder_frames.clone()).collect();
    let f = styleeq::encode_batch(g, pv, cfg, &enc, drop("target"))?;
    let source = match x_prime {
        XPrime::SelfRef => return Ok(f),
        XPrime::Samples(xs) => {
            if xs.len() != targets.len() {
                return Err(Error::invalid("x' batch size differs from target batch size"));
            }
            let enc: Vec<Mat> = xs.iter().map(|s| s.encoder_frames.clone()).collect();
            styleeq::encode_batch(g, pv, cfg, &enc, drop("x_prime"))?
        }
        XPrime::Anchor(a) => {
            assert_eq!(a.shape(), (1, cfg.feature_dim()), "anchor is one feature frame");
            let mut frames = Mat::zeros(targets.len(), a.cols);
            for b in 0..targets.len() {
                frames.row_mut(b).copy_from_slice(&a.data);
            }
            FeatureBatch { frames: g.constant(frames), layout: FrameLayout { t_max: 1, lens: vec![1; targets.len()] } }
        }
        XPrime::Noise { seed } => {
            let layout = f.layout.clone();
            let mut r = rng::stream(*seed, "x_prime.noise", 0);
            let frames = rng::normal_mat(&mut r, targets.len() * layout.t_max, cfg.feature_dim());
            FeatureBatch { frames: g.constant(frames), layout }
        }
    };
    let basis = pv.get(STYLE_BASIS);
    let delta = styleeq::phi_graph(g, basis, &f, &source);
    Ok(styleeq::transform_m_graph(g, basis, &source, delta))
}

/// Builds the batch objective on `g`; returns the loss node and its parts.
pub fn build_loss(
    g: &mut Graph,
    pv: &ParamVars,
    cfg: &ModelConfig,
    targets: &[&TrainSample],
    x_prime: &XPrime<'_>,
    settings: LossSettings,
    seeds: LossSeeds,
) -> Result<(Var, LossParts)> {
    let batch = targets.len();
    if batch == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let features = reference_features(g, pv, cfg, targets, x_prime, seeds.dropout)?;
    let memory = styleeq::style_memory(g, pv, &features);
    let content = BatchContent::new(&targets.iter().map(|s| s.content.clone()).collect::<Vec<_>>());
    let t_max = targets.iter().map(|s| s.frames.rows).max().unwrap_or(0);
    let mut st = CellState::zeros(g, cfg, batch);
    let mut terms = Vec::with_capacity(2 * t_max);
    let (mut nll_sum, mut kl_sum, mut frames) = (0.0, 0.0, 0);
    for t in 0..t_max {
        let mut r = rng::stream(seeds.teacher, "step", t as u64);
        let mut x_prev = Mat::zeros(batch, 3);
        let mut mask = Mat::zeros(batch, 1);
        let mut tgt = Vec::with_capacity(batch);
        let mut last = Vec::with_capacity(batch);
        for (b, s) in targets.iter().enumerate() {
            let (n1, n2) = (rng::normal(&mut r), rng::normal(&mut r));
            let len = s.frames.rows;
            if t < len {
                mask.data[b] = 1.0;
                frames += 1;
                let row = s.frames.row(t);
                tgt.push([row[0], row[1], row[2]]);
                last.push(t + 1 == len);
            } else {
                tgt.push(START_TOKEN);
                last.push(false);
            }
            let prev = if t == 0 || t > len { START_TOKEN } else { s.frames.row(t - 1).try_into().expect("3 columns") };
            let noisy = if t == 0 || t > len {
                prev
            } else {
                [prev[0] + settings.teacher_noise_std * n1, prev[1] + settings.teacher_noise_std * n2, prev[2]]
            };
            x_prev.row_mut(b).copy_from_slice(&noisy);
        }
        let xv = g.constant(x_prev);
        let noise = g.constant(rng::normal_mat(&mut rng::stream(seeds.reparam, "step", t as u64), batch, cfg.z_dim));
        let (next, out) = cell(g, pv, cfg, &st, xv, &content, Latent::Posterior { memory: &memory, noise });
        check_finite(g, &next, out.raw, t)?;
        st = next;
        let (mq, lq) = out.posterior.expect("posterior branch");
        let nll = mixture_nll(g, out.raw, cfg.num_mixtures, tgt, last);
        let kl = kl_graph(g, mq, lq, out.prior.0, out.prior.1);
        let mv = g.constant(mask);
        let nll = g.mul_col(nll, mv);
        let kl = g.mul_col(kl, mv);
        nll_sum += g.value(nll).sum();
        kl_sum += g.value(kl).sum();
        terms.push(nll);
        terms.push(kl);
    }
    let all = g.concat_cols(&terms);
    let total = g.sum(all);
    let elbo = g.scale(total, 1.0 / batch as f64);
    let tr = styleeq::trace_regularizer_graph(g, pv.get(STYLE_BASIS), settings.trace_probes, seeds.probes);
    let trace_reg = g.scalar(tr);
    let trw = g.scale(tr, settings.trace_weight);
    let loss = g.add(elbo, trw);
    let lv = g.scalar(loss);
    for (term, v) in [("reconstruction", nll_sum), ("kl", kl_sum), ("trace regularizer", trace_reg), ("loss", lv)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: term.into(), step: t_max });
        }
    }
    Ok((loss, LossParts { nll_sum, kl_sum, frames, trace_reg, loss: lv }))
}

/// Evaluates the objective without gradients.
pub fn elbo_loss(
    params: &ModelParams,
    targets: &[&TrainSample],
    x_prime: &XPrime<'_>,
    settings: LossSettings,
    seeds: LossSeeds,
) -> Result<LossParts> {
    let mut g = Graph::new();
    let pv = ParamVars::load(&mut g, params, false);
    build_loss(&mut g, &pv, &params.config, targets, x_prime, settings, seeds).map(|(_, p)| p)
}

/// Objective value and gradients keyed by parameter name.
pub fn loss_and_grads(
    params: &ModelParams,
    targets: &[&TrainSample],
    x_prime: &XPrime<'_>,
    settings: LossSettings,
    seeds: LossSeeds,
) -> Result<(LossParts, std::collections::BTreeMap<String, Mat>)> {
    let mut g = Graph::new();
    let pv = ParamVars::load(&mut g, params, true);
    let (loss, parts) = build_loss(&mut g, &pv, &params.config, targets, x_prime, settings, seeds)?;
    let mut grads: Gradients = g.backward(loss);
    let out = pv
        .iter()
        .map(|(name, v)| {
            let m = grads.take(v).unwrap_or_else(|| {
                let p = params.get(name);
                Mat::zeros(p.rows, p.cols)
            });
            (name.to_string(), m)
        })
        .collect();
    Ok((parts, out))
}

/// One Adam update with bias correction.
pub fn adam_update(
    params: &mut ModelParams,
    grads: &std::collections::BTreeMap<String, Mat>,
    opt: &mut OptimizerState,
    lr: f64,
    betas: [f64; 2],
    eps: f64,
) {
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = (betas[0], betas[1]);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads {
        let p = params.tensors.get_mut(name).expect("gradient for a known parameter");
        let m = opt.m.get_mut(name).expect("moment");
        let v = opt.v.get_mut(name).expect("moment");
        for i in 0..g.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            let mh = m.data[i] / c1;
            let vh = v.data[i] / c2;
            p.data[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Global L2 norm; rescales to `max_norm` if above it. Returns `(norm, clipped)`.
pub fn clip_grad_norm(grads: &mut std::collections::BTreeMap<String, Mat>, max_norm: f64) -> (f64, bool) {
    let norm = grads.values().map(Mat::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.values_mut().for_each(|g| g.scale_assign(s));
        (norm, true)
    } else {
        (norm, false)
    }
}

/// Owns the parameters, optimizer and step counter of a run.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub opt: OptimizerState,
    pub style_source: StyleSource,
    /// Completed steps.
    pub step: u64,
    data: &'a [TrainSample],
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a [TrainSample]) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let params = ModelParams::init(&config.model, rng::derive(config.seed, "init", 0))?;
        let opt = OptimizerState::zeros(&params);
        let style_source = match config.x_prime_mode {
            XPrimeMode::FixedVector => {
                StyleSource::FixedAnchor(rng::normal_mat(&mut rng::stream(config.seed, "anchor", 0), 1, config.model.feature_dim()))
            }
            XPrimeMode::RandomNoise => StyleSource::NoiseAnchor,
            _ => StyleSource::Direct,
        };
        Ok(Self { config, params, opt, style_source, step: 0, data })
    }

    /// Continues from a checkpoint that carries optimizer state.
    pub fn resume(config: TrainConfig, data: &'a [TrainSample], ckpt: Checkpoint) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if ckpt.params.config != config.model {
            return Err(Error::invalid("checkpoint model config differs from the training config"));
        }
        let opt = ckpt.optimizer.ok_or_else(|| Error::invalid("checkpoint has no optimizer state to resume from"))?;
        Ok(Self { config, params: ckpt.params, opt, style_source: ckpt.style_source, step: ckpt.step, data })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            step: self.step,
            optimizer: Some(self.opt.clone()),
            style_source: self.style_source.clone(),
            meta: serde_json::json!({ "x_prime_mode": self.config.x_prime_mode }),
        }
    }

    /// Whether batch `step` (1-based) is equalized.
    pub fn equalized(&self, step: u64) -> bool {
        let c = &self.config;
        match c.x_prime_mode {
            XPrimeMode::AlwaysSelf => false,
            XPrimeMode::FixedVector | XPrimeMode::RandomNoise => true,
            XPrimeMode::RealSample if c.alternate_equalization => {
                let p = c.equalize_fraction;
                (step as f64 * p).floor() != ((step - 1) as f64 * p).floor()
            }
            XPrimeMode::RealSample => rng::stream(c.seed, "equalize", step).random::<f64>() < c.equalize_fraction,
        }
    }

    fn draw(&self, label: &str, step: u64) -> Vec<&'a TrainSample> {
        let mut r = rng::stream(self.config.seed, label, step);
        let data = self.data;
        (0..self.config.batch_size).map(|_| &data[r.random_range(0..data.len())]).collect()
    }

    /// Runs one optimizer step. On a non-finite loss nothing is updated.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let step = self.step + 1;
        let targets = self.draw("batch", step);
        let equalized = self.equalized(step);
        let x_prime = match (&self.style_source, equalized) {
            (_, false) => XPrime::SelfRef,
            (StyleSource::FixedAnchor(a), true) => XPrime::Anchor(a.clone()),
            (StyleSource::NoiseAnchor, true) => XPrime::Noise { seed: rng::derive(self.config.seed, "x_prime", step) },
            (StyleSource::Direct, true) => XPrime::Samples(self.draw("x_prime", step)),
        };
        let seeds = LossSeeds::for_step(self.config.seed, step);
        let (parts, mut grads) = loss_and_grads(&self.params, &targets, &x_prime, (&self.config).into(), seeds)?;
        let (grad_norm, clipped) = clip_grad_norm(&mut grads, self.config.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite { term: "gradient".into(), step: step as usize });
        }
        let lr = lr_schedule(step, self.config.warmup_steps, self.config.peak_lr)?;
        adam_update(&mut self.params, &grads, &mut self.opt, lr, self.config.adam_betas, self.config.adam_eps);
        self.params.normalize_basis_columns();
        self.step = step;
        let frames = parts.frames.max(1) as f64;
        Ok(StepMetrics {
            step,
            loss: parts.loss,
            nll_per_frame: parts.nll_sum / frames,
            kl_per_frame: parts.kl_sum / frames,
            trace_reg: parts.trace_reg,
            grad_norm,
            clipped,
            lr,
            equalized,
        })
    }
}

/// Held-out NLL and KL per frame with `x' = x`, no dropout and no teacher noise.
pub fn validate(params: &ModelParams, data: &[TrainSample], batch_size: usize, seed: u64, step: u64) -> Result<ValidationMetrics> {
    if data.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let settings = LossSettings { teacher_noise_std: 0.0, trace_probes: 1, trace_weight: 0.0 };
    let (mut nll, mut kl, mut frames) = (0.0, 0.0, 0);
    for (i, chunk) in data.chunks(batch_size.max(1)).enumerate() {
        let refs: Vec<&TrainSample> = chunk.iter().collect();
        let seeds = LossSeeds {
            teacher: 0,
            reparam: rng::derive(seed, "validation.reparam", i as u64),
            dropout: None,
            probes: 0,
        };
        let p = elbo_loss(params, &refs, &XPrime::SelfRef, settings, seeds)?;
        nll += p.nll_sum;
        kl += p.kl_sum;
        frames += p.frames;
    }
    let f = frames as f64;
    Ok(ValidationMetrics { step, nll_per_frame: nll / f, kl_per_frame: kl / f, kl_collapsed: kl / f < KL_COLLAPSE_THRESHOLD })
}

/// Result of [`train`].
pub struct TrainOutcome {
    /// Final checkpoint, or the last good one after a divergence.
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
    pub validation: Vec<ValidationMetrics>,
    pub diverged: Option<Error>,
}

/// Runs to `config.max_steps`, optionally from a resumable checkpoint.
/// `on_step` sees every completed step with the trainer's state.
pub fn train(
    data: &[TrainSample],
    valid: &[TrainSample],
    config: &TrainConfig,
    resume: Option<Checkpoint>,
    mut on_step: impl FnMut(&StepMetrics, &Trainer<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut tr = match resume {
        Some(c) => Trainer::resume(config.clone(), data, c)?,
        None => Trainer::new(config.clone(), data)?,
    };
    let mut metrics = Vec::new();
    let mut validation = Vec::new();
    while tr.step < config.max_steps {
        match tr.train_step() {
            Ok(m) => {
                on_step(&m, &tr)?;
                metrics.push(m);
            }
            Err(e @ Error::NonFinite { .. }) => {
                return Ok(TrainOutcome { checkpoint: tr.checkpoint(), metrics, validation, diverged: Some(e) });
            }
            Err(e) => return Err(e),
        }
        if config.eval_every > 0 && tr.step % config.eval_every == 0 && !valid.is_empty() {
            validation.push(validate(&tr.params, valid, config.batch_size, config.seed, tr.step)?);
        }
    }
    Ok(TrainOutcome { checkpoint: tr.checkpoint(), metrics, validation, diverged: None })
}

/// Appends metrics as JSON lines.
pub fn write_metrics(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m).expect("metrics serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
