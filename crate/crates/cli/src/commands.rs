use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use styleeq_core::evaluation::{self, AblationVariant, EvalOptions, EvalSetting, StyleInput};
use styleeq_core::inference::{self, GenerationConfig, GenerationRecord, Primer};
use styleeq_core::synthglyph::dataset::{read_dataset, write_dataset};
use styleeq_core::synthglyph::svg::render_svg;
use styleeq_core::synthglyph::{make_dataset, DatasetConfig};
use styleeq_core::training::{self, TrainConfig, XPrimeMode};
use styleeq_core::{rng, Checkpoint, ContentSequence, LabeledSample};

use crate::manifest::{parse_toml, read_config, OutDir, RunManifest};
use crate::{CmdResult, Common, DumpArgs, EvalArgs, Failure, GenerateArgs, Mode, RenderArgs, TrainArgs};

fn require_config(c: &Common) -> CmdResult<(PathBuf, Vec<u8>)> {
    let path = c.config.clone().ok_or_else(|| Failure::Usage("--config is required".into()))?;
    let bytes = read_config(&path)?;
    Ok((path, bytes))
}

fn check_threads(c: &Common) -> CmdResult {
    if c.threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> CmdResult<Checkpoint> {
    Ok(Checkpoint::load(path)?)
}

fn parse_content(s: &str, alphabet: usize) -> CmdResult<ContentSequence> {
    let symbols = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Failure::Usage(format!("--content: {t:?} is not a glyph id"))))
        .collect::<CmdResult<Vec<_>>>()?;
    Ok(ContentSequence::new(symbols, alphabet)?)
}

fn pick<'a>(set: &'a [LabeledSample], i: usize, flag: &str) -> CmdResult<&'a LabeledSample> {
    set.get(i).ok_or_else(|| Failure::Validation(format!("{flag} {i} is out of range ({} records)", set.len())))
}

pub fn synth(c: &Common) -> CmdResult {
    check_threads(c)?;
    let (path, bytes) = require_config(c)?;
    let mut cfg: DatasetConfig = parse_toml(&path, &bytes)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let samples = make_dataset(&cfg)?;
    let mut m = RunManifest::new("synth", c.threads);
    m.config(&path, &bytes);
    m.seeds.insert("dataset".into(), cfg.seed);
    let mut out = OutDir::open(&c.out, m)?;
    let dm = write_dataset(&out.root, &cfg, &samples)?;
    out.record("records.jsonl");
    out.record("manifest.json");
    println!("wrote {} records ({})", dm.num_records, dm.records_sha256);
    out.finish()
}

pub fn train(a: &TrainArgs) -> CmdResult {
    check_threads(&a.common)?;
    let (path, bytes) = require_config(&a.common)?;
    let mut cfg: TrainConfig = parse_toml(&path, &bytes)?;
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let (_, train_set) = read_dataset(&a.data)?;
    let valid_set = match &a.valid {
        Some(v) => read_dataset(v)?.1,
        None => Vec::new(),
    };
    let resume = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let data = training::prepare(&train_set, &cfg.model)?;
    let valid = training::prepare(&valid_set, &cfg.model)?;

    let mut m = RunManifest::new("train", a.common.threads);
    m.config(&path, &bytes);
    m.dataset("train", &a.data)?;
    if let Some(v) = &a.valid {
        m.dataset("valid", v)?;
    }
    if let Some(r) = &a.resume {
        m.parent(r)?;
    }
    m.seeds.insert("train".into(), cfg.seed);
    let mut out = OutDir::open(&a.common.out, m)?;
    out.write("train_config.toml", cfg.to_toml())?;

    let every = cfg.checkpoint_every;
    let mut periodic = Vec::new();
    let outcome = training::train(&data, &valid, &cfg, resume, |m, tr| {
        if every > 0 && m.step % every == 0 {
            let name = format!("ckpt-{:06}.ckpt", m.step);
            tr.checkpoint().save(&out.root.join(&name))?;
            periodic.push(name);
        }
        Ok(())
    })?;
    for p in &periodic {
        out.record(p);
    }
    if !outcome.metrics.is_empty() {
        training::write_metrics(&out.path("metrics.jsonl"), &outcome.metrics)?;
        out.record("metrics.jsonl");
    }
    if !outcome.validation.is_empty() {
        let lines: String = outcome.validation.iter().map(|v| serde_json::to_string(v).expect("serializes") + "\n").collect();
        out.write("validation.jsonl", lines)?;
    }
    if let Some(e) = outcome.diverged {
        outcome.checkpoint.save(&out.path("last_good.ckpt"))?;
        out.record("last_good.ckpt");
        out.finish()?;
        return Err(Failure::Runtime(format!("training diverged: {e}; last good checkpoint kept as last_good.ckpt")));
    }
    outcome.checkpoint.save(&out.path("final.ckpt"))?;
    out.record("final.ckpt");
    println!("trained to step {}", outcome.checkpoint.step);
    out.finish()
}

/// Stroke output of one generation.
#[derive(Serialize)]
struct GeneratedRecord<'a> {
    symbols: &'a [usize],
    seed: u64,
    strokes: Vec<[f64; 3]>,
}

pub fn generate(a: &GenerateArgs) -> CmdResult {
    check_threads(&a.common)?;
    let need = |v: Option<usize>, flag: &str| v.ok_or_else(|| Failure::Usage(format!("--mode {:?} requires {flag}", a.mode).to_lowercase()));
    if a.alpha.is_some() && a.mode != Mode::Interpolate {
        return Err(Failure::Usage("--alpha only applies to --mode interpolate with two references".into()));
    }
    if a.mode == Mode::Prior && (a.reference.is_some() || a.target.is_some()) {
        return Err(Failure::Usage("--mode prior takes no references".into()));
    }
    let (ri, ti, alpha) = match a.mode {
        Mode::Prior => (None, None, None),
        Mode::Replicate | Mode::Primed => (Some(need(a.reference, "--ref")?), None, None),
        Mode::Interpolate => {
            let alpha = a.alpha.ok_or_else(|| Failure::Usage("--mode interpolate requires --alpha".into()))?;
            (Some(need(a.reference, "--ref")?), Some(need(a.target, "--ref2")?), Some(alpha))
        }
    };
    let refs = match (ri, &a.references) {
        (None, _) => Vec::new(),
        (Some(_), None) => return Err(Failure::Usage("--references is required with --ref".into())),
        (Some(_), Some(dir)) => read_dataset(dir)?.1,
    };
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let alphabet = ckpt.params.config.alphabet_size;
    let contents = a.content.iter().map(|c| parse_content(c, alphabet)).collect::<CmdResult<Vec<_>>>()?;
    let seed = a.common.seed.unwrap_or(0);
    let reference = ri.map(|i| pick(&refs, i, "--ref")).transpose()?;
    let target = ti.map(|i| pick(&refs, i, "--ref2")).transpose()?;

    let mut m = RunManifest::new("generate", a.common.threads);
    m.parent(&a.checkpoint)?;
    if let Some(d) = &a.references {
        m.dataset("references", d)?;
    }
    m.seeds.insert("generate".into(), seed);
    let mut out = OutDir::open(&a.common.out, m)?;
    let mode = format!("{:?}", a.mode).to_lowercase();
    let mut records = Vec::new();
    for (i, content) in contents.iter().enumerate() {
        let gcfg = GenerationConfig {
            std_scale: a.std_scale,
            max_frames: a.max_frames,
            seed: rng::derive(seed, "generate", i as u64),
            ..GenerationConfig::default()
        };
        let p = &ckpt.params;
        let g = match a.mode {
            Mode::Replicate => inference::generate_replicate_with_source(content, &reference.expect("checked").strokes, p, &ckpt.style_source, &gcfg)?,
            Mode::Interpolate => inference::generate_interpolate(
                content,
                &reference.expect("checked").strokes,
                &target.expect("checked").strokes,
                alpha.expect("checked"),
                p,
                &gcfg,
            )?,
            Mode::Prior => inference::generate_from_prior(content, p, &gcfg)?,
            Mode::Primed => {
                let r = reference.expect("checked");
                inference::generate_primed(content, Some(Primer { strokes: &r.strokes, content: &r.content }), p, &gcfg)?
            }
        };
        let stem = format!("sample-{i:03}");
        let rec = GeneratedRecord { symbols: &content.symbols, seed: gcfg.seed, strokes: g.strokes.to_triplets() };
        out.write(&format!("{stem}.json"), serde_json::to_string(&rec).expect("serializes") + "\n")?;
        out.write(&format!("{stem}.svg"), render_svg(&g.strokes))?;
        records.push(GenerationRecord {
            mode: mode.clone(),
            content: content.symbols.clone(),
            reference_ids: ri.into_iter().chain(ti).map(|i| i.to_string()).collect(),
            alpha,
            seed: gcfg.seed,
            output_path: format!("{stem}.json"),
            truncated: g.truncated,
        });
    }
    out.write("generation_manifest.json", serde_json::to_string_pretty(&records).expect("serializes") + "\n")?;
    println!("wrote {} generations", records.len());
    out.finish()
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    check_threads(&a.common)?;
    if a.num_pairs == 0 {
        return Err(Failure::Usage("--num-pairs must be positive".into()));
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let (_, set) = read_dataset(&a.data)?;
    let seed = a.common.seed.unwrap_or(0);
    let mut opts = EvalOptions::new(a.setting, a.num_pairs, seed);
    if a.zero_style {
        opts.style_input = StyleInput::Zeroed;
    }
    let report = evaluation::eval_pairs(&ckpt, &set, &opts)?;
    let mut m = RunManifest::new("eval", a.common.threads);
    m.parent(&a.checkpoint)?;
    m.dataset("eval", &a.data)?;
    m.seeds.insert("eval".into(), seed);
    let mut out = OutDir::open(&a.common.out, m)?;
    out.write("report.json", report.to_json() + "\n")?;
    let (ger, slant, scale) = (report.glyph_error_rate.mean, report.style_errors.slant.median, report.style_errors.scale.median);
    println!("{:?}: glyph error rate {ger:.4}, median slant error {slant:.4}, median scale error {scale:.4}", a.setting);
    out.finish()?;
    let mut failed = Vec::new();
    for (name, v, max) in [("glyph error rate", ger, a.max_ger), ("slant error", slant, a.max_slant_error), ("scale error", scale, a.max_scale_error)] {
        if let Some(max) = max {
            if !(v <= max) {
                failed.push(format!("{name} {v:.4} > {max}"));
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Threshold(failed.join("; ")))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AblationConfig {
    train_data: PathBuf,
    eval_data: PathBuf,
    #[serde(default = "default_pairs")]
    num_pairs: usize,
    #[serde(default)]
    seed: u64,
    /// Shared training settings; variants change only the x' mode and p_eq.
    base: TrainConfig,
    variant: Vec<VariantSpec>,
}

fn default_pairs() -> usize {
    100
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantSpec {
    name: String,
    x_prime_mode: XPrimeMode,
    equalize_fraction: Option<f64>,
}

pub fn ablation(c: &Common) -> CmdResult {
    check_threads(c)?;
    let (path, bytes) = require_config(c)?;
    let mut cfg: AblationConfig = parse_toml(&path, &bytes)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let variants: Vec<AblationVariant> = cfg
        .variant
        .iter()
        .map(|v| {
            let mut t = cfg.base.clone();
            t.x_prime_mode = v.x_prime_mode;
            if let Some(p) = v.equalize_fraction {
                t.equalize_fraction = p;
            }
            t.validate().map(|_| AblationVariant { name: v.name.clone(), config: t })
        })
        .collect::<styleeq_core::Result<_>>()?;
    let (_, train_set) = read_dataset(&cfg.train_data)?;
    let (_, eval_set) = read_dataset(&cfg.eval_data)?;
    let mut m = RunManifest::new("ablation", c.threads);
    m.config(&path, &bytes);
    m.dataset("train", &cfg.train_data)?;
    m.dataset("eval", &cfg.eval_data)?;
    m.seeds.insert("eval".into(), cfg.seed);
    m.seeds.insert("train".into(), cfg.base.seed);
    let mut out = OutDir::open(&c.out, m)?;
    let mut saved = Vec::new();
    let table = evaluation::ablation_suite(&train_set, &eval_set, &variants, cfg.num_pairs, cfg.seed, |v, ck| {
        let name = format!("{}.ckpt", v.name);
        if ck.save(&out.root.join(&name)).is_ok() {
            saved.push(name);
        }
    })?;
    for s in &saved {
        out.record(s);
    }
    let checks = table.leakage_checks();
    out.write("ablation.txt", table.to_text())?;
    out.write("ablation.csv", table.to_csv())?;
    let json = serde_json::json!({ "rows": table.rows, "checks": checks });
    out.write("ablation.json", serde_json::to_string_pretty(&json).expect("serializes") + "\n")?;
    print!("{}", table.to_text());
    out.finish()?;
    let failed: Vec<String> = table.rows.iter().filter_map(|r| r.failure.as_ref().map(|f| format!("{}: {f}", r.name))).collect();
    let unmet: Vec<String> = checks.iter().flatten().filter(|c| !c.passed).map(|c| format!("{} ({:.4} vs {:.4})", c.name, c.measured, c.bound)).collect();
    match (failed.is_empty(), unmet.is_empty()) {
        (true, true) => Ok(()),
        (false, _) => Err(Failure::Threshold(format!("variants failed: {}", failed.join("; ")))),
        (true, false) => Err(Failure::Threshold(format!("orderings not met: {}", unmet.join("; ")))),
    }
}

pub fn dump_attention(a: &DumpArgs) -> CmdResult {
    check_threads(&a.common)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let (_, set) = read_dataset(&a.references)?;
    let reference = pick(&set, a.reference, "--ref")?;
    let content = match (a.setting, &a.content) {
        (EvalSetting::Parallel, Some(_)) => return Err(Failure::Usage("--content only applies to --setting nonparallel".into())),
        (EvalSetting::Parallel, None) => reference.content.clone(),
        (EvalSetting::Nonparallel, Some(c)) => parse_content(c, ckpt.params.config.alphabet_size)?,
        (EvalSetting::Nonparallel, None) => set
            .iter()
            .cycle()
            .skip(a.reference + 1)
            .take(set.len())
            .find(|s| s.content.symbols != reference.content.symbols)
            .map(|s| s.content.clone())
            .ok_or_else(|| Failure::Validation("no record with different content for the nonparallel setting".into()))?,
    };
    let seed = a.common.seed.unwrap_or(0);
    let dump = evaluation::dump_style_attention(&ckpt, &content, reference, a.setting, &GenerationConfig { seed, ..GenerationConfig::default() })?;
    let mut m = RunManifest::new("dump-attention", a.common.threads);
    m.parent(&a.checkpoint)?;
    m.dataset("references", &a.references)?;
    m.seeds.insert("generate".into(), seed);
    let mut out = OutDir::open(&a.common.out, m)?;
    evaluation::write_attention(&dump, &out.root, "attention")?;
    out.record("attention.json");
    out.record("attention.svg");
    println!("mean entropy {:.4}, temporal variance {:.6}", dump.mean_entropy, dump.temporal_variance);
    out.finish()
}

pub fn render(a: &RenderArgs) -> CmdResult {
    check_threads(&a.common)?;
    let (_, set) = read_dataset(&a.data)?;
    let mut m = RunManifest::new("render", a.common.threads);
    m.dataset("render", &a.data)?;
    let mut out = OutDir::open(&a.common.out, m)?;
    for (i, s) in set.iter().enumerate() {
        out.write(&format!("sample-{i:03}.svg"), render_svg(&s.strokes))?;
    }
    out.finish()
}
