//! End-to-end acceptance checks, one line per criterion.
//!
//! Trained models are cached under the cargo target directory, keyed by the
//! hash of their training config and data, so reruns only pay for evaluation.
//! Clear that cache after changing model code.
//! Measured values go to `results/acceptance.json` and `results/ablation.txt`.
//!
//! Environment:
//! - `STYLEEQ_ACCEPTANCE_STEPS` overrides the ablation step budget (default 10000).
//! - `STYLEEQ_ACCEPTANCE_STRICT=1` exits nonzero when any criterion fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use serde_json::json;
use styleeq_core::autograd::gradcheck;
use styleeq_core::evaluation::{
    dump_style_attention, eval_pairs, AblationRow, AblationTable, EvalOptions, EvalReport, EvalSetting, StyleInput,
};
use styleeq_core::inference::{generate_interpolate, interpolation_features, GenerationConfig};
use styleeq_core::rng;
use styleeq_core::seqmodel::gaussian::{kl_diag_gaussians, kl_graph};
use styleeq_core::seqmodel::mdn::{mixture_nll, output_log_prob};
use styleeq_core::styleeq::conv::receptive_field;
use styleeq_core::styleeq::{
    conv_encode_frames, encoder_stack, exact_trace_ata_squared, phi, phi_graph, segment_mean, trace_regularizer, trace_regularizer_graph,
    transform_m, transform_m_graph, FeatureBatch, FrameLayout,
};
use styleeq_core::synthglyph::dataset::{encode_records, sha256_hex, Holdout, HoldoutMode};
use styleeq_core::synthglyph::oracle::fit_style_oracle;
use styleeq_core::synthglyph::templates::builtin_templates;
use styleeq_core::synthglyph::{make_dataset, render_sample, DatasetConfig, OracleGrid, StyleSampler};
use styleeq_core::training::{self, elbo_loss, loss_and_grads, LossSeeds, LossSettings, TrainConfig, TrainSample, XPrime, XPrimeMode};
use styleeq_core::{Checkpoint, ContentSequence, GaussianDiag, LabeledSample, Mat, ModelConfig, ModelParams, OutputDistParams, Result, StyleBasis, StyleFeatureSequence, StyleParams};

type Outcome = Result<(bool, String)>;

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
}

fn run(lines: &mut Vec<Line>, id: usize, name: &'static str, f: impl FnOnce() -> Outcome) {
    let t = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    let seconds = t.elapsed().as_secs_f64();
    println!("[{}] {id:>2} {name}: {detail} ({seconds:.1}s)", if passed { "PASS" } else { "FAIL" });
    lines.push(Line { id, name, passed, detail, seconds });
}

fn rand_mat(r: &mut rng::Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect())
}

fn features(m: Mat) -> StyleFeatureSequence {
    let n = m.rows;
    StyleFeatureSequence { frames: m, source_length: n }
}

// ---------------------------------------------------------------- 1

fn algebraic_identities() -> Outcome {
    let mut r = rng::stream(11, "acceptance.identities", 0);
    let basis = StyleBasis { a: rand_mat(&mut r, 10, 64) };
    let f = features(rand_mat(&mut r, 7, 64));
    let f2 = features(rand_mat(&mut r, 4, 64));

    let zero_phi = phi(&f, &f, &basis)?.delta.iter().all(|&d| d == 0.0);
    let zero = styleeq_core::StyleDelta { delta: vec![0.0; 10] };
    let m_identity = transform_m(&f, &zero, &basis)?.frames == f.frames;

    let params = ModelParams::init(&ModelConfig::default(), 5)?;
    let a0 = interpolation_features(&params, &f, &f2, 0.0)?.frames == f.frames;
    let full = transform_m(&f, &phi(&f2, &f, &StyleBasis::from_params(&params))?, &StyleBasis::from_params(&params))?;
    let a1 = interpolation_features(&params, &f, &f2, 1.0)?.frames == full.frames;

    let q = GaussianDiag { mean: vec![0.3, -1.2, 4.0], log_std: vec![0.1, -2.0, 1.5] };
    let kl_self = kl_diag_gaussians(&q, &q)?;
    let kl_half = kl_diag_gaussians(&GaussianDiag { mean: vec![1.0], log_std: vec![0.0] }, &GaussianDiag::standard(1))?;

    let ok = zero_phi && m_identity && a0 && a1 && kl_self == 0.0 && kl_half == 0.5;
    Ok((ok, format!("phi(f,f)=0 {zero_phi}, M(f,0)=f {m_identity}, alpha0 {a0}, alpha1 {a1}, KL(q,q)={kl_self}, KL(N(1,1)|N(0,1))={kl_half}")))
}

// ---------------------------------------------------------------- 2

fn numerical_oracles() -> Outcome {
    // Mixture density quadrature over offsets, summed over both bits.
    let dist = OutputDistParams {
        pi: vec![0.5, 0.3, 0.2],
        mu: vec![[0.4, -0.3], [-1.0, 0.8], [1.5, 1.0]],
        sigma: vec![[0.6, 0.9], [0.4, 0.3], [1.1, 0.7]],
        rho: vec![0.5, -0.7, 0.1],
        pen_prob: 0.3,
        stop_prob: 0.05,
    };
    let (lo, hi, step) = (-8.0, 8.0, 0.02);
    let n = ((hi - lo) / step) as usize;
    let mut mass = 0.0;
    for i in 0..n {
        let x = lo + (i as f64 + 0.5) * step;
        for j in 0..n {
            let y = lo + (j as f64 + 0.5) * step;
            for pen in [0.0, 1.0] {
                for last in [false, true] {
                    mass += output_log_prob(&dist, [x, y, pen], last)?.exp();
                }
            }
        }
    }
    mass *= step * step;
    let quad_ok = (0.99..=1.01).contains(&mass);

    // Hutchinson against the dense trace.
    let mut r = rng::stream(12, "acceptance.hutchinson", 0);
    let basis = StyleBasis { a: rand_mat(&mut r, 10, 64) };
    let exact = exact_trace_ata_squared(&basis.a);
    let est = trace_regularizer(&basis, 10_000, 3)?;
    let rel = (est - exact).abs() / exact;
    let ident = exact_trace_ata_squared(&Mat::identity(2));

    // Closed-form KL against Monte Carlo.
    let q = GaussianDiag { mean: vec![0.5, -0.2, 1.0], log_std: vec![-0.3, 0.2, 0.0] };
    let p = GaussianDiag { mean: vec![0.0, 0.4, 0.5], log_std: vec![0.1, -0.1, 0.3] };
    let closed = kl_diag_gaussians(&q, &p)?;
    let mut mr = rng::stream(13, "acceptance.kl_mc", 0);
    let n_mc = 100_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_mc {
        let z: Vec<f64> = q.mean.iter().zip(&q.log_std).map(|(m, l)| m + l.exp() * rng::normal(&mut mr)).collect();
        let v = q.log_density(&z) - p.log_density(&z);
        s += v;
        s2 += v * v;
    }
    let mean = s / n_mc as f64;
    let se = ((s2 / n_mc as f64 - mean * mean) / n_mc as f64).sqrt();
    let kl_ok = (closed - mean).abs() <= 3.0 * se;

    let ok = quad_ok && rel < 0.01 && ident == 2.0 && kl_ok;
    Ok((
        ok,
        format!(
            "mixture mass {mass:.5}; trace est {est:.3} vs exact {exact:.3} (rel {rel:.4}); identity {ident}; KL {closed:.5} vs MC {mean:.5} +- {se:.5}"
        ),
    ))
}

// ---------------------------------------------------------------- 3

fn tiny_model() -> ModelConfig {
    ModelConfig {
        alphabet_size: 4,
        bottom_dim: 5,
        top_dim: 4,
        z_dim: 3,
        num_windows: 2,
        num_mixtures: 2,
        conv_channels: [3, 3, 4, 4],
        style_dim: 2,
        heads: 2,
        head_dim: 2,
        style_proj_dim: 3,
        prior_hidden: 4,
        ..ModelConfig::default()
    }
}

fn gradient_checks() -> Outcome {
    let model = tiny_model();
    let cfg = DatasetConfig {
        num_samples: 2,
        alphabet_size: model.alphabet_size,
        min_len: 1,
        max_len: 1,
        style: StyleSampler { speed: (1.5, 2.0), ..StyleSampler::default() },
        seed: 3,
    };
    let data = training::prepare(&make_dataset(&cfg)?, &model)?;
    let params = ModelParams::init(&model, 2)?;
    let targets: Vec<&TrainSample> = vec![&data[0]];
    let xp = XPrime::Samples(vec![&data[1]]);
    let settings = LossSettings { teacher_noise_std: 0.1, trace_probes: 3, trace_weight: 1.0 };
    let seeds = LossSeeds { dropout: None, ..LossSeeds::for_step(1, 1) };
    let (_, grads) = loss_and_grads(&params, &targets, &xp, settings, seeds)?;

    let groups: [(&str, &[&str]); 6] = [
        ("output head", &["head."]),
        ("prior", &["prior."]),
        ("posterior", &["posterior.", "attn."]),
        ("equalization basis", &["style.basis"]),
        ("conv stack", &["conv"]),
        ("recurrent core", &["bottom.", "top", "window."]),
    ];
    let h = 1e-6;
    let mut r = rng::stream(14, "acceptance.gradcheck", 0);
    let mut parts = Vec::new();
    let mut ok = true;
    for (label, prefixes) in groups {
        let names: Vec<&String> = params.tensors.keys().filter(|n| prefixes.iter().any(|p| n.starts_with(p))).collect();
        let mut worst: f64 = 0.0;
        for _ in 0..16 {
            let name = names[r.random_range(0..names.len())];
            let idx = r.random_range(0..params.get(name).len());
            let mut p = params.clone();
            p.get_mut(name).data[idx] += h;
            let plus = elbo_loss(&p, &targets, &xp, settings, seeds)?.loss;
            p.get_mut(name).data[idx] -= 2.0 * h;
            let minus = elbo_loss(&p, &targets, &xp, settings, seeds)?.loss;
            let num = (plus - minus) / (2.0 * h);
            let ana = grads[name.as_str()].data[idx];
            worst = worst.max((ana - num).abs() / (ana.abs() + num.abs()).max(1e-4));
        }
        ok &= worst < 1e-3;
        parts.push(format!("{label} {worst:.1e}"));
    }

    // Scalar sub-functions, checked on every entry.
    let mut gr = rng::stream(15, "acceptance.gradcheck", 1);
    let trace = gradcheck::check(&[rand_mat(&mut gr, 3, 5)], 1e-6, 1e-10, |g, v| trace_regularizer_graph(g, v[0], 7, 3));
    let lt = FrameLayout { t_max: 3, lens: vec![3, 2] };
    let ls = FrameLayout { t_max: 2, lens: vec![1, 2] };
    let eq_inputs = [rand_mat(&mut gr, 2, 4), rand_mat(&mut gr, 6, 4), rand_mat(&mut gr, 4, 4)];
    let eq = gradcheck::check(&eq_inputs, 1e-6, 1e-10, |g, v| {
        let t = FeatureBatch { frames: v[1], layout: lt.clone() };
        let s = FeatureBatch { frames: v[2], layout: ls.clone() };
        let d = phi_graph(g, v[0], &t, &s);
        let out = transform_m_graph(g, v[0], &s, d);
        let m = segment_mean(g, out.frames, &ls);
        g.sum_squares(m)
    });
    let kl_inputs: Vec<Mat> = (0..4).map(|_| rand_mat(&mut gr, 2, 3)).collect();
    let kl = gradcheck::check(&kl_inputs, 1e-6, 1e-10, |g, v| {
        let k = kl_graph(g, v[0], v[1], v[2], v[3]);
        g.sum(k)
    });
    let nll = gradcheck::check(&[rand_mat(&mut gr, 2, 14)], 1e-6, 1e-10, |g, v| {
        let l = mixture_nll(g, v[0], 2, vec![[0.3, -0.2, 1.0], [-0.5, 0.1, 0.0]], vec![false, true]);
        g.sum(l)
    });
    for (label, rep) in [("trace", &trace), ("phi/M", &eq), ("KL", &kl), ("mixture NLL", &nll)] {
        ok &= rep.max_rel_err < 1e-4;
        parts.push(format!("{label} {:.1e}", rep.max_rel_err));
    }
    Ok((ok, format!("max rel err: {}", parts.join(", "))))
}

// ---------------------------------------------------------------- 4

fn shift_property() -> Outcome {
    let params = ModelParams::init(&ModelConfig::default(), 7)?;
    let mut r = rng::stream(16, "acceptance.shift", 0);
    let len = 76 + 16 * 8;
    let base = rand_mat(&mut r, len, 3);
    let prefix = rand_mat(&mut r, 16, 3);
    let mut shifted = Mat::zeros(len + 16, 3);
    shifted.data[..48].copy_from_slice(&prefix.data);
    shifted.data[48..].copy_from_slice(&base.data);
    let a = conv_encode_frames(&params, &base)?.frames;
    let b = conv_encode_frames(&params, &shifted)?.frames;
    let mut worst: f64 = 0.0;
    for t in 0..a.rows {
        for (x, y) in a.row(t).iter().zip(b.row(t + 1)) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok((worst < 1e-5 && b.rows == a.rows + 1, format!("{} interior frames, max abs diff {worst:.2e}", a.rows)))
}

// ---------------------------------------------------------------- 5

fn receptive_field_check() -> Outcome {
    let cfg = ModelConfig::default();
    let computed = receptive_field(&encoder_stack(&cfg));
    let params = ModelParams::init(&cfg, 8)?;
    let len = 76 + 16;
    let base = Mat::zeros(len, 3);
    let y0 = conv_encode_frames(&params, &base)?.frames;
    // Input positions that move each output frame.
    let mut support: Vec<Vec<usize>> = vec![Vec::new(); y0.rows];
    for p in 0..len {
        let mut x = base.clone();
        x.set(p, 0, 1.0);
        let y = conv_encode_frames(&params, &x)?.frames;
        for (t, s) in support.iter_mut().enumerate() {
            if y.row(t).iter().zip(y0.row(t)).any(|(a, b)| a != b) {
                s.push(p);
            }
        }
    }
    let spans: Vec<(usize, usize)> = support.iter().map(|s| (s[0], *s.last().unwrap())).collect();
    let measured: Vec<usize> = spans.iter().map(|(a, b)| b - a + 1).collect();
    let ok = computed == 76 && measured.iter().all(|&m| m == 76) && spans.iter().enumerate().all(|(t, s)| s.0 == 16 * t);
    Ok((ok, format!("computed {computed}; impulse support per output frame {spans:?}")))
}

// ---------------------------------------------------------------- shared training

/// Desk-scale data: speed fixed, no jitter or drift.
fn desk_style(holdout: Option<Holdout>) -> StyleSampler {
    StyleSampler { speed: (1.0, 1.0), jitter: (0.0, 0.0), drift: (0.0, 0.0), holdout, ..StyleSampler::default() }
}

fn holdout(mode: HoldoutMode) -> Holdout {
    Holdout { mode, slant_bins: 4, scale_bins: 4, cells: vec![(1, 2), (2, 1), (3, 3)] }
}

fn desk_train(base_steps: u64) -> TrainConfig {
    TrainConfig { batch_size: 16, peak_lr: 3e-3, warmup_steps: 100, max_steps: base_steps, seed: 1, ..TrainConfig::default() }
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache")
}

/// Trains, or loads an identical earlier run from the cache.
fn trained(samples: &[LabeledSample], cfg: &TrainConfig) -> Result<(Checkpoint, Vec<training::StepMetrics>)> {
    let key = sha256_hex(&[cfg.to_toml().into_bytes(), encode_records(samples)?].concat());
    let dir = cache_dir();
    let ck_path = dir.join(format!("{}.ckpt", &key[..16]));
    let m_path = dir.join(format!("{}.metrics.json", &key[..16]));
    if let (Ok(ck), Ok(m)) = (Checkpoint::load(&ck_path), std::fs::read(&m_path)) {
        if let Ok(metrics) = serde_json::from_slice(&m) {
            return Ok((ck, metrics));
        }
    }
    let data = training::prepare(samples, &cfg.model)?;
    let out = training::train(&data, &[], cfg, None, |_, _| Ok(()))?;
    if let Some(e) = out.diverged {
        return Err(e);
    }
    std::fs::create_dir_all(&dir).map_err(|e| styleeq_core::Error::io(&dir, e))?;
    out.checkpoint.save(&ck_path)?;
    std::fs::write(&m_path, serde_json::to_vec(&out.metrics).expect("metrics serialize")).map_err(|e| styleeq_core::Error::io(&m_path, e))?;
    Ok((out.checkpoint, out.metrics))
}

// ---------------------------------------------------------------- 6

fn overfit(results: &mut serde_json::Value) -> Outcome {
    let set = make_dataset(&DatasetConfig { num_samples: 32, alphabet_size: 10, min_len: 1, max_len: 3, style: desk_style(None), seed: 1 })?;
    let (ck, metrics) = trained(&set, &desk_train(2000))?;
    let at50 = metrics[49].nll_per_frame;
    let tail = &metrics[metrics.len() - 50..];
    let end = tail.iter().map(|m| m.nll_per_frame).sum::<f64>() / tail.len() as f64;
    let drop = (at50 - end) / at50.abs();

    let report = eval_pairs(&ck, &set, &EvalOptions::new(EvalSetting::Parallel, set.len(), 6))?;
    let first = &report.records[0];
    let first_ok = first.decoded == first.target;
    let exact = report.records.iter().filter(|r| r.decoded == r.target).count();
    results["overfit"] = json!({
        "nll_per_frame_step50": at50, "nll_per_frame_final50": end, "relative_drop": drop,
        "first_sample": {"target": first.target, "decoded": first.decoded},
        "exact_replications": exact, "samples": set.len(), "parallel_ger_mean": report.glyph_error_rate.mean,
    });
    Ok((
        drop >= 0.5 && first_ok,
        format!(
            "nll/frame {at50:.3} at step 50 -> {end:.3} (drop {:.0}%); first training sample {:?} -> {:?}; {exact}/{} replicated exactly",
            100.0 * drop,
            first.target,
            first.decoded,
            set.len()
        ),
    ))
}

// ---------------------------------------------------------------- 7-10

struct Trained {
    always_self: Checkpoint,
    equalized: Checkpoint,
    full_eq: Checkpoint,
    eval_set: Vec<LabeledSample>,
    heldout_set: Vec<LabeledSample>,
    steps: u64,
}

fn train_variants() -> Result<Trained> {
    let steps = std::env::var("STYLEEQ_ACCEPTANCE_STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let ds = |n, seed, h| DatasetConfig { num_samples: n, alphabet_size: 10, min_len: 1, max_len: 3, style: desk_style(Some(h)), seed };
    let train_set = make_dataset(&ds(2000, 21, holdout(HoldoutMode::Exclude)))?;
    let eval_set = make_dataset(&ds(200, 22, holdout(HoldoutMode::Exclude)))?;
    let heldout_set = make_dataset(&ds(200, 23, holdout(HoldoutMode::Only)))?;
    let base = desk_train(steps);
    let variant = |mode, p| TrainConfig { x_prime_mode: mode, equalize_fraction: p, ..base.clone() };
    let (always_self, _) = trained(&train_set, &variant(XPrimeMode::AlwaysSelf, 0.0))?;
    let (equalized, _) = trained(&train_set, &variant(XPrimeMode::RealSample, 0.5))?;
    let (full_eq, _) = trained(&train_set, &variant(XPrimeMode::RealSample, 1.0))?;
    Ok(Trained { always_self, equalized, full_eq, eval_set, heldout_set, steps })
}

fn report(ck: &Checkpoint, set: &[LabeledSample], setting: EvalSetting, input: StyleInput) -> Result<EvalReport> {
    let mut o = EvalOptions::new(setting, 100, 31);
    o.style_input = input;
    eval_pairs(ck, set, &o)
}

fn row(name: &str, ck: &Checkpoint, t: &Trained, mode: XPrimeMode, p: f64) -> Result<AblationRow> {
    let par = report(ck, &t.eval_set, EvalSetting::Parallel, StyleInput::Reference)?;
    let npar = report(ck, &t.eval_set, EvalSetting::Nonparallel, StyleInput::Reference)?;
    Ok(AblationRow {
        name: name.into(),
        x_prime_mode: mode,
        equalize_fraction: p,
        steps: t.steps,
        parallel_ger: par.glyph_error_rate.mean,
        nonparallel_ger: npar.glyph_error_rate.mean,
        slant_error_median: npar.style_errors.slant.median,
        scale_error_median: npar.style_errors.scale.median,
        failure: None,
    })
}

fn leakage(t: &Trained, results: &mut serde_json::Value, out_dir: &Path) -> Outcome {
    let table = AblationTable {
        rows: vec![
            row("always_self", &t.always_self, t, XPrimeMode::AlwaysSelf, 0.0)?,
            row("real_sample_p0.5", &t.equalized, t, XPrimeMode::RealSample, 0.5)?,
            row("real_sample_p1.0", &t.full_eq, t, XPrimeMode::RealSample, 1.0)?,
        ],
    };
    let _ = std::fs::write(out_dir.join("ablation.txt"), table.to_text());
    let checks = table.leakage_checks().expect("both variants present");
    results["ablation"] = json!({ "table": table, "checks": checks });
    let ok = checks.iter().all(|c| c.passed);
    let detail = checks.iter().map(|c| format!("{} {:.3} vs {:.3} {}", c.name, c.measured, c.bound, if c.passed { "ok" } else { "unmet" })).collect::<Vec<_>>();
    Ok((ok, format!("{} steps per variant; {}", t.steps, detail.join("; "))))
}

fn style_replication(t: &Trained, results: &mut serde_json::Value) -> Outcome {
    let grid = OracleGrid::default();
    let with = report(&t.equalized, &t.heldout_set, EvalSetting::Nonparallel, StyleInput::Reference)?;
    let without = report(&t.equalized, &t.heldout_set, EvalSetting::Nonparallel, StyleInput::Zeroed)?;
    let (sl, sc) = (with.style_errors.slant.median, with.style_errors.scale.median);
    let (bsl, bsc) = (without.style_errors.slant.median, without.style_errors.scale.median);
    let ok = sl <= 2.0 * grid.slant_step && sc <= 2.0 * grid.scale_step && sl < bsl && sc < bsc;
    results["style_replication"] = json!({
        "slant_error_median": sl, "scale_error_median": sc,
        "baseline_slant_error_median": bsl, "baseline_scale_error_median": bsc,
        "nonparallel_ger": with.glyph_error_rate.mean, "baseline_nonparallel_ger": without.glyph_error_rate.mean,
    });
    Ok((
        ok,
        format!(
            "median slant err {sl:.3} (limit {:.2}, zero-style {bsl:.3}); median scale err {sc:.3} (limit {:.2}, zero-style {bsc:.3})",
            2.0 * grid.slant_step,
            2.0 * grid.scale_step
        ),
    ))
}

fn interpolation(t: &Trained, results: &mut serde_json::Value) -> Outcome {
    let grid = OracleGrid::default();
    let templates = builtin_templates();
    let content = ContentSequence::new(vec![2, 7], 10)?;
    let style = |slant| StyleParams { slant, scale: 1.0, speed: 1.0, jitter: 0.0, baseline_drift: 0.0 };
    let src = render_sample(&content, &style(-0.3), 5, &templates)?;
    let dst = render_sample(&content, &style(0.3), 5, &templates)?;
    let alphas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut slants = Vec::new();
    for &a in &alphas {
        let mut acc = Vec::new();
        for s in 0..5 {
            let g = generate_interpolate(&content, &src, &dst, a, &t.equalized.params, &GenerationConfig { seed: s, ..GenerationConfig::default() })?;
            if let Ok(fit) = fit_style_oracle(&g.strokes, &templates, &grid) {
                acc.push(fit.style.slant);
            }
        }
        slants.push(if acc.is_empty() { f64::NAN } else { acc.iter().sum::<f64>() / acc.len() as f64 });
    }
    let monotone = slants.windows(2).all(|w| w[1] >= w[0] - grid.slant_step);
    // A flat curve is monotone only vacuously; the references are 0.6 apart.
    let rises = slants[4] - slants[0] >= grid.slant_step;
    results["interpolation"] = json!({ "alphas": alphas, "mean_recovered_slant": slants, "monotone_with_ties": monotone, "net_rise": slants[4] - slants[0] });
    let note = if rises { "" } else { "; no net change across alpha" };
    Ok((monotone && rises && slants.iter().all(|s| s.is_finite()), format!("recovered slant over alpha {slants:.3?}{note}")))
}

fn attention_behavior(t: &Trained, results: &mut serde_json::Value) -> Outcome {
    let mut var = [0.0, 0.0];
    let mut ent = [0.0, 0.0];
    let n = 10;
    let templates = builtin_templates();
    // Short references encode to a single feature frame, where attention is
    // trivially constant; twelve glyphs give six frames.
    let long = ContentSequence::new((0..12).map(|j| (j * 7 + 3) % 10).collect(), 10)?;
    let mut frames = 0;
    for i in 0..n {
        let style = t.eval_set[i].style.clone();
        let strokes = render_sample(&long, &style, i as u64, &templates)?;
        let reference = LabeledSample { strokes, content: long.clone(), style, seed: i as u64 };
        let content = &t.eval_set[i + n].content;
        for (k, ck) in [&t.full_eq, &t.equalized].into_iter().enumerate() {
            let d = dump_style_attention(ck, content, &reference, EvalSetting::Nonparallel, &GenerationConfig { seed: i as u64, ..GenerationConfig::default() })?;
            frames = d.frames;
            var[k] += d.temporal_variance / n as f64;
            ent[k] += d.mean_entropy / n as f64;
        }
    }
    results["attention"] = json!({
        "p1.0": {"temporal_variance": var[0], "mean_entropy": ent[0]},
        "p0.5": {"temporal_variance": var[1], "mean_entropy": ent[1]},
    });
    // Differences below this are rounding, not behaviour.
    let noise = 1e-9;
    Ok((
        var[1] - var[0] > noise,
        format!("{frames} style frames; temporal variance p=1.0 {:.3e} vs p=0.5 {:.3e}; entropy {:.3} vs {:.3}", var[0], var[1], ent[0], ent[1]),
    ))
}

// ---------------------------------------------------------------- 11

fn reproducibility() -> Outcome {
    let dcfg = DatasetConfig { num_samples: 12, alphabet_size: 4, min_len: 1, max_len: 2, style: StyleSampler { speed: (1.5, 2.0), ..StyleSampler::default() }, seed: 9 };
    let d1 = encode_records(&make_dataset(&dcfg)?)?;
    let d2 = encode_records(&make_dataset(&dcfg)?)?;
    let dataset_ok = d1 == d2;

    let set = make_dataset(&dcfg)?;
    let model = tiny_model();
    let data = training::prepare(&set, &model)?;
    let cfg = TrainConfig { batch_size: 4, max_steps: 20, warmup_steps: 5, peak_lr: 1e-2, seed: 4, model, ..TrainConfig::default() };
    let full = training::train(&data, &[], &cfg, None, |_, _| Ok(()))?;
    let half = training::train(&data, &[], &TrainConfig { max_steps: 10, ..cfg.clone() }, None, |_, _| Ok(()))?;
    let resumed = training::train(&data, &[], &cfg, Some(Checkpoint::from_bytes(&half.checkpoint.to_bytes()?)?), |_, _| Ok(()))?;
    let again = training::train(&data, &[], &cfg, None, |_, _| Ok(()))?;
    let train_ok = full.checkpoint.to_bytes()? == again.checkpoint.to_bytes()?;
    let resume_ok = full.checkpoint.to_bytes()? == resumed.checkpoint.to_bytes()? && full.metrics[10..] == resumed.metrics[..];

    let opts = EvalOptions::new(EvalSetting::Nonparallel, 6, 2);
    let e1 = eval_pairs(&full.checkpoint, &set, &opts)?.to_json();
    let e2 = eval_pairs(&full.checkpoint, &set, &opts)?.to_json();
    let eval_ok = e1 == e2;
    Ok((
        dataset_ok && train_ok && resume_ok && eval_ok,
        format!("dataset {dataset_ok}, training {train_ok}, resume {resume_ok}, evaluation {eval_ok}"),
    ))
}

fn main() {
    let out_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../results");
    let _ = std::fs::create_dir_all(&out_dir);
    let mut results = json!({});
    let mut lines = Vec::new();
    run(&mut lines, 1, "algebraic identities", algebraic_identities);
    run(&mut lines, 2, "numerical oracles", numerical_oracles);
    run(&mut lines, 3, "gradient checks", gradient_checks);
    run(&mut lines, 4, "anti-aliasing shift", shift_property);
    run(&mut lines, 5, "receptive field", receptive_field_check);
    run(&mut lines, 6, "overfit sanity", || overfit(&mut results));
    let t0 = Instant::now();
    match train_variants() {
        Ok(t) => {
            println!("       trained or loaded ablation variants in {:.1}s", t0.elapsed().as_secs_f64());
            run(&mut lines, 7, "content-leakage ablation", || leakage(&t, &mut results, &out_dir));
            run(&mut lines, 8, "style replication", || style_replication(&t, &mut results));
            run(&mut lines, 9, "interpolation monotonicity", || interpolation(&t, &mut results));
            run(&mut lines, 10, "attention behaviour", || attention_behavior(&t, &mut results));
        }
        Err(e) => {
            let msg = e.to_string();
            for (id, name) in [(7, "content-leakage ablation"), (8, "style replication"), (9, "interpolation monotonicity"), (10, "attention behaviour")] {
                run(&mut lines, id, name, || Err(styleeq_core::Error::invalid(format!("training failed: {msg}"))));
            }
        }
    }
    run(&mut lines, 11, "reproducibility", reproducibility);

    let passed = lines.iter().filter(|l| l.passed).count();
    println!("{passed}/{} criteria passed", lines.len());
    results["criteria"] = lines
        .iter()
        .map(|l| json!({"id": l.id, "name": l.name, "passed": l.passed, "detail": l.detail, "seconds": l.seconds}))
        .collect();
    let _ = std::fs::write(out_dir.join("acceptance.json"), serde_json::to_string_pretty(&results).expect("results serialize") + "\n");
    if passed < lines.len() && std::env::var("STYLEEQ_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
