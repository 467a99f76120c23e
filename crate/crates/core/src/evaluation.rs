//! Content-leakage and style-replication metrics on the synthetic domain,
//! style-attention dumps, and the x' ablation suite.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{anchored_features, encode_reference, generate_with_features, GenerationConfig};
use crate::rng;
use crate::seqmodel::checkpoint::{Checkpoint, StyleSource};
use crate::seqmodel::ModelParams;
use crate::styleeq::StyleFeatureSequence;
use crate::synthglyph::{builtin_templates, decode_content_oracle, fit_style_oracle, ContentSequence, LabeledSample, OracleGrid, StrokeSequence, StyleParams};
use crate::tensor::Mat;
use crate::training::{self, TrainConfig, TrainSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSetting {
    /// The generated content is the reference's own content.
    Parallel,
    /// The generated content comes from a different sample.
    Nonparallel,
}

impl std::str::FromStr for EvalSetting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Self::Parallel),
            "nonparallel" => Ok(Self::Nonparallel),
            other => Err(Error::invalid(format!("unknown setting {other:?}; expected parallel or nonparallel"))),
        }
    }
}

/// What the model sees as its style input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleInput {
    /// Features of the reference (through the checkpoint's style source).
    Reference,
    /// A single all-zero feature frame: the no-style baseline.
    Zeroed,
}

/// Levenshtein distance between id sequences.
pub fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance normalized by the target length.
pub fn glyph_error_rate(target: &[usize], decoded: &[usize]) -> f64 {
    levenshtein(target, decoded) as f64 / target.len().max(1) as f64
}

/// Mean, standard deviation and median of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub count: usize,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN, median: f64::NAN, count: 0 };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        let m = s.len() / 2;
        let median = if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) };
        Self { mean, std, median, count: xs.len() }
    }
}

/// One evaluated pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair: usize,
    pub reference_index: usize,
    pub content_index: usize,
    pub target: Vec<usize>,
    pub decoded: Vec<usize>,
    pub glyph_error_rate: f64,
    pub reference_style: StyleParams,
    /// `None` when the oracle could not segment the generation.
    pub recovered_style: Option<StyleParams>,
    pub segmentation_failed: bool,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleErrors {
    pub slant: Stats,
    pub scale: Stats,
    pub speed: Stats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: EvalSetting,
    pub style_input: StyleInput,
    pub num_pairs: usize,
    pub glyph_error_rate: Stats,
    pub style_errors: StyleErrors,
    pub records: Vec<PairRecord>,
}

impl EvalReport {
    /// Rebuilds the aggregates from `records`.
    pub fn from_records(setting: EvalSetting, style_input: StyleInput, records: Vec<PairRecord>) -> Self {
        let ger: Vec<f64> = records.iter().map(|r| r.glyph_error_rate).collect();
        let err = |f: fn(&StyleParams) -> f64| -> Stats {
            let v: Vec<f64> = records
                .iter()
                .filter_map(|r| r.recovered_style.as_ref().map(|s| (f(s) - f(&r.reference_style)).abs()))
                .collect();
            Stats::of(&v)
        };
        Self {
            setting,
            style_input,
            num_pairs: records.len(),
            glyph_error_rate: Stats::of(&ger),
            style_errors: StyleErrors { slant: err(|s| s.slant), scale: err(|s| s.scale), speed: err(|s| s.speed) },
            records,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Options of [`eval_pairs`].
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub setting: EvalSetting,
    pub num_pairs: usize,
    pub seed: u64,
    pub style_input: StyleInput,
    pub generation: GenerationConfig,
    pub grid: OracleGrid,
}

impl EvalOptions {
    pub fn new(setting: EvalSetting, num_pairs: usize, seed: u64) -> Self {
        Self {
            setting,
            num_pairs,
            seed,
            style_input: StyleInput::Reference,
            generation: GenerationConfig::default(),
            grid: OracleGrid::default(),
        }
    }
}

/// `(reference index, content index)` of every pair. Nonparallel pairs always
/// take their content from a different sample with different symbols when
/// one exists.
pub fn pairings(eval_set: &[LabeledSample], setting: EvalSetting, num_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let n = eval_set.len();
    let mut r = rng::stream(seed, "eval.pairs", 0);
    (0..num_pairs)
        .map(|i| {
            let reference = if num_pairs <= n { i } else { r.random_range(0..n) };
            let content = match setting {
                EvalSetting::Parallel => reference,
                EvalSetting::Nonparallel => {
                    let mut j = r.random_range(0..n);
                    for _ in 0..64 {
                        if j != reference && eval_set[j].content.symbols != eval_set[reference].content.symbols {
                            break;
                        }
                        j = r.random_range(0..n);
                    }
                    if j == reference {
                        j = (reference + 1) % n;
                    }
                    j
                }
            };
            (reference, content)
        })
        .collect()
}

fn style_features(
    params: &ModelParams,
    source: &StyleSource,
    reference: &StrokeSequence,
    input: StyleInput,
    seed: u64,
) -> Result<StyleFeatureSequence> {
    match input {
        StyleInput::Reference => anchored_features(params, source, encode_reference(params, reference)?, seed),
        StyleInput::Zeroed => Ok(StyleFeatureSequence { frames: Mat::zeros(1, params.config.feature_dim()), source_length: reference.len() }),
    }
}

/// Generates one sample per pair and scores it with the oracles.
pub fn eval_pairs(ckpt: &Checkpoint, eval_set: &[LabeledSample], opts: &EvalOptions) -> Result<EvalReport> {
    if opts.num_pairs == 0 {
        return Err(Error::invalid("num_pairs must be positive"));
    }
    if eval_set.len() < 2 && opts.setting == EvalSetting::Nonparallel {
        return Err(Error::invalid("nonparallel evaluation needs at least two samples"));
    }
    if eval_set.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let templates = builtin_templates();
    let mut records = Vec::with_capacity(opts.num_pairs);
    for (i, (ri, ci)) in pairings(eval_set, opts.setting, opts.num_pairs, opts.seed).into_iter().enumerate() {
        let reference = &eval_set[ri];
        let content: &ContentSequence = &eval_set[ci].content;
        let seed = rng::derive(opts.seed, "eval.pair", i as u64);
        let f = style_features(&ckpt.params, &ckpt.style_source, &reference.strokes, opts.style_input, seed)?;
        let gcfg = GenerationConfig { seed, ..opts.generation.clone() };
        let gen = generate_with_features(content, &f, &ckpt.params, &gcfg)?;
        let decoded = decode_content_oracle(&gen.strokes, &templates, &opts.grid).ok();
        let recovered = fit_style_oracle(&gen.strokes, &templates, &opts.grid).ok().map(|s| s.style);
        let segmentation_failed = decoded.is_none();
        let decoded = decoded.unwrap_or_default();
        records.push(PairRecord {
            pair: i,
            reference_index: ri,
            content_index: ci,
            glyph_error_rate: if segmentation_failed { 1.0 } else { glyph_error_rate(&content.symbols, &decoded) },
            target: content.symbols.clone(),
            decoded,
            reference_style: reference.style,
            recovered_style: recovered,
            segmentation_failed,
            truncated: gen.truncated,
        });
    }
    Ok(EvalReport::from_records(opts.setting, opts.style_input, records))
}

/// Oracle-only analogue of a report: decodes the references themselves.
pub fn oracle_floor(eval_set: &[LabeledSample], grid: &OracleGrid) -> Result<Stats> {
    let templates = builtin_templates();
    let v: Vec<f64> = eval_set
        .iter()
        .map(|s| decode_content_oracle(&s.strokes, &templates, grid).map(|d| glyph_error_rate(&s.content.symbols, &d)).unwrap_or(1.0))
        .collect();
    Ok(Stats::of(&v))
}

/// Style-attention weights over a generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub setting: EvalSetting,
    pub heads: usize,
    pub frames: usize,
    /// `weights[t][h][j]`.
    pub weights: Vec<Vec<Vec<f64>>>,
    /// Mean over steps and heads of the weight entropy (nats).
    pub mean_entropy: f64,
    /// Mean over heads and frames of the variance across steps.
    pub temporal_variance: f64,
}

/// `(mean entropy, temporal variance)` of per-step `H × T'` weights.
pub fn attention_stats(weights: &[Mat]) -> (f64, f64) {
    if weights.is_empty() {
        return (0.0, 0.0);
    }
    let (h, tp) = weights[0].shape();
    let mut ent = 0.0;
    for w in weights {
        for r in 0..h {
            ent -= w.row(r).iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
        }
    }
    let steps = weights.len() as f64;
    let mut var = 0.0;
    for r in 0..h {
        for j in 0..tp {
            let m = weights.iter().map(|w| w.get(r, j)).sum::<f64>() / steps;
            var += weights.iter().map(|w| (w.get(r, j) - m).powi(2)).sum::<f64>() / steps;
        }
    }
    (ent / (steps * h as f64), var / (h * tp) as f64)
}

/// Generates `content` from `reference` and records the style attention.
pub fn dump_style_attention(
    ckpt: &Checkpoint,
    content: &ContentSequence,
    reference: &LabeledSample,
    setting: EvalSetting,
    gcfg: &GenerationConfig,
) -> Result<AttentionDump> {
    let f = style_features(&ckpt.params, &ckpt.style_source, &reference.strokes, StyleInput::Reference, gcfg.seed)?;
    let gen = generate_with_features(content, &f, &ckpt.params, gcfg)?;
    Ok(attention_dump(setting, &gen.style_weights))
}

pub fn attention_dump(setting: EvalSetting, weights: &[Mat]) -> AttentionDump {
    let (mean_entropy, temporal_variance) = attention_stats(weights);
    let (heads, frames) = weights.first().map_or((0, 0), Mat::shape);
    AttentionDump {
        setting,
        heads,
        frames,
        weights: weights.iter().map(|w| (0..w.rows).map(|r| w.row(r).to_vec()).collect()).collect(),
        mean_entropy,
        temporal_variance,
    }
}

/// Heatmap: one column per step, one row per (head, frame).
pub fn attention_svg(dump: &AttentionDump) -> String {
    let (cw, ch) = (6.0, 10.0);
    let rows = dump.heads * dump.frames;
    let (w, h) = (dump.weights.len() as f64 * cw, rows as f64 * ch);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" width=\"{w}\" height=\"{h}\">\n");
    for (t, step) in dump.weights.iter().enumerate() {
        for (hd, row) in step.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                let shade = (255.0 * (1.0 - p.clamp(0.0, 1.0))).round() as u8;
                let _ = writeln!(
                    s,
                    "<rect x=\"{}\" y=\"{}\" width=\"{cw}\" height=\"{ch}\" fill=\"rgb({shade},{shade},{shade})\"/>",
                    t as f64 * cw,
                    (hd * dump.frames + j) as f64 * ch
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.json` and `<stem>.svg` under `dir`.
pub fn write_attention(dump: &AttentionDump, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let j = dir.join(format!("{stem}.json"));
    std::fs::write(&j, serde_json::to_string(dump).expect("dump serializes")).map_err(|e| Error::io(&j, e))?;
    let s = dir.join(format!("{stem}.svg"));
    std::fs::write(&s, attention_svg(dump)).map_err(|e| Error::io(&s, e))
}

/// A named training variant of the ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub x_prime_mode: training::XPrimeMode,
    pub equalize_fraction: f64,
    pub steps: u64,
    pub parallel_ger: f64,
    pub nonparallel_ger: f64,
    pub slant_error_median: f64,
    pub scale_error_median: f64,
    /// `None` on success, otherwise why the variant failed.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<20} {:<12} {:>5} {:>7} {:>8} {:>8} {:>8} {:>8}  {}\n",
            "variant", "x_prime", "p_eq", "steps", "par_ger", "npar_ger", "slant_e", "scale_e", "status"
        );
        for r in &self.rows {
            let mode = serde_json::to_value(r.x_prime_mode).expect("mode").as_str().unwrap_or_default().to_string();
            let _ = writeln!(
                s,
                "{:<20} {:<12} {:>5.2} {:>7} {:>8.4} {:>8.4} {:>8.4} {:>8.4}  {}",
                r.name,
                mode,
                r.equalize_fraction,
                r.steps,
                r.parallel_ger,
                r.nonparallel_ger,
                r.slant_error_median,
                r.scale_error_median,
                r.failure.as_deref().unwrap_or("ok")
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,x_prime_mode,equalize_fraction,steps,parallel_ger,nonparallel_ger,slant_error_median,scale_error_median,status\n");
        for r in &self.rows {
            let mode = serde_json::to_value(r.x_prime_mode).expect("mode").as_str().unwrap_or_default().to_string();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.name,
                mode,
                r.equalize_fraction,
                r.steps,
                r.parallel_ger,
                r.nonparallel_ger,
                r.slant_error_median,
                r.scale_error_median,
                r.failure.as_deref().unwrap_or("ok").replace(',', ";")
            );
        }
        s
    }

    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// One ordering check between ablation rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub name: String,
    /// Left-hand side of the inequality.
    pub measured: f64,
    /// Right-hand side of the inequality.
    pub bound: f64,
    pub passed: bool,
}

impl AblationTable {
    /// The content-leakage orderings between the first successful
    /// `always_self` row and the first successful partially equalized
    /// `real_sample` row. `None` when either is missing.
    pub fn leakage_checks(&self) -> Option<Vec<OrderingCheck>> {
        let ok = |r: &&AblationRow| r.failure.is_none();
        let base = self.rows.iter().filter(ok).find(|r| r.x_prime_mode == training::XPrimeMode::AlwaysSelf)?;
        let eq = self
            .rows
            .iter()
            .filter(ok)
            .find(|r| r.x_prime_mode == training::XPrimeMode::RealSample && r.equalize_fraction > 0.0 && r.equalize_fraction < 1.0)?;
        let check = |name: &str, measured: f64, bound: f64, ge: bool| OrderingCheck {
            name: name.into(),
            measured,
            bound,
            passed: if ge { measured >= bound } else { measured <= bound },
        };
        Some(vec![
            check("unequalized nonparallel >= 2x its parallel", base.nonparallel_ger, 2.0 * base.parallel_ger, true),
            check("equalized nonparallel <= 0.5x unequalized nonparallel", eq.nonparallel_ger, 0.5 * base.nonparallel_ger, false),
            check("equalized nonparallel <= 2x its parallel", eq.nonparallel_ger, 2.0 * eq.parallel_ger, false),
        ])
    }
}

/// Trains every variant on `train_set`, evaluates both settings on
/// `eval_set`, and tabulates. A failing variant is recorded and skipped.
pub fn ablation_suite(
    train_set: &[LabeledSample],
    eval_set: &[LabeledSample],
    variants: &[AblationVariant],
    num_pairs: usize,
    seed: u64,
    mut on_trained: impl FnMut(&AblationVariant, &Checkpoint),
) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::invalid("no ablation variants"));
    }
    let model = &variants[0].config.model;
    if variants.iter().any(|v| &v.config.model != model || v.config.max_steps != variants[0].config.max_steps) {
        return Err(Error::invalid("ablation variants must share model size and step budget"));
    }
    let data: Vec<TrainSample> = training::prepare(train_set, model)?;
    let mut rows = Vec::new();
    for v in variants {
        let base = AblationRow {
            name: v.name.clone(),
            x_prime_mode: v.config.x_prime_mode,
            equalize_fraction: v.config.equalize_fraction,
            steps: v.config.max_steps,
            parallel_ger: f64::NAN,
            nonparallel_ger: f64::NAN,
            slant_error_median: f64::NAN,
            scale_error_median: f64::NAN,
            failure: None,
        };
        let outcome = match training::train(&data, &[], &v.config, None, |_, _| Ok(())) {
            Ok(o) => o,
            Err(e) => {
                rows.push(AblationRow { failure: Some(e.to_string()), ..base });
                continue;
            }
        };
        if let Some(e) = outcome.diverged {
            rows.push(AblationRow { failure: Some(format!("diverged: {e}")), ..base });
            continue;
        }
        on_trained(v, &outcome.checkpoint);
        let par = eval_pairs(&outcome.checkpoint, eval_set, &EvalOptions::new(EvalSetting::Parallel, num_pairs, seed));
        let npar = eval_pairs(&outcome.checkpoint, eval_set, &EvalOptions::new(EvalSetting::Nonparallel, num_pairs, seed));
        match (par, npar) {
            (Ok(p), Ok(n)) => rows.push(AblationRow {
                parallel_ger: p.glyph_error_rate.mean,
                nonparallel_ger: n.glyph_error_rate.mean,
                slant_error_median: n.style_errors.slant.median,
                scale_error_median: n.style_errors.scale.median,
                ..base
            }),
            (Err(e), _) | (_, Err(e)) => rows.push(AblationRow { failure: Some(e.to_string()), ..base }),
        }
    }
    Ok(AblationTable { rows })
}
