use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn styleeq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_styleeq")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SYNTH: &str = r#"
num_samples = 6
alphabet_size = 10
min_len = 1
max_len = 2
seed = 3

[style]
slant = [-0.3, 0.3]
scale = [0.8, 1.2]
speed = [0.9, 1.1]
jitter = [0.0, 0.0]
drift = [0.0, 0.0]
"#;

const MODEL: &str = r#"
[model]
bottom_dim = 6
top_dim = 6
z_dim = 3
num_windows = 2
num_mixtures = 2
conv_channels = [3, 3, 4, 6]
style_dim = 3
heads = 2
head_dim = 2
style_proj_dim = 3
prior_hidden = 4
"#;

fn train_head(max_steps: u64, every: u64) -> String {
    format!("batch_size = 2\nwarmup_steps = 5\npeak_lr = 0.001\ntrace_probes = 4\nmax_steps = {max_steps}\ncheckpoint_every = {every}\nseed = 9\n")
}

fn train_toml(max_steps: u64, every: u64) -> String {
    train_head(max_steps, every) + MODEL
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let f = dir.join(name);
    fs::write(&f, text).unwrap();
    f
}

fn dataset(dir: &Path) -> PathBuf {
    let cfg = write(dir, "synth.toml", SYNTH);
    let out = dir.join("data");
    let o = styleeq(&["synth", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

/// A briefly trained checkpoint in `dir/run/final.ckpt`.
fn checkpoint(dir: &Path, data: &Path) -> PathBuf {
    let cfg = write(dir, "train.toml", &train_toml(3, 0));
    let out = dir.join("run");
    let o = styleeq(&["train", "--config", p(&cfg), "--data", p(data), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("final.ckpt")
}

#[test]
fn missing_config_names_the_path() {
    let t = tempfile::tempdir().unwrap();
    let missing = t.path().join("nope.toml");
    let o = styleeq(&["synth", "--config", p(&missing), "--out", p(&t.path().join("o"))]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("nope.toml"), "{}", stderr(&o));
}

#[test]
fn synth_is_byte_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "synth.toml", SYNTH);
    for d in ["a", "b"] {
        assert_eq!(code(&styleeq(&["synth", "--config", p(&cfg), "--out", p(&t.path().join(d))])), 0);
    }
    for f in ["records.jsonl", "manifest.json"] {
        assert_eq!(fs::read(t.path().join("a").join(f)).unwrap(), fs::read(t.path().join("b").join(f)).unwrap());
    }
    assert!(t.path().join("a/run_manifest.json").exists());
    assert!(!t.path().join("a/.styleeq.lock").exists());
}

#[test]
fn invalid_synth_config_writes_nothing() {
    let t = tempfile::tempdir().unwrap();
    let bad = write(t.path(), "bad.toml", &SYNTH.replace("min_len = 1", "min_len = 3"));
    let out = t.path().join("o");
    let o = styleeq(&["synth", "--config", p(&bad), "--out", p(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(!out.exists());
    let typo = write(t.path(), "typo.toml", &format!("num_sample = 3\n{SYNTH}"));
    assert_eq!(code(&styleeq(&["synth", "--config", p(&typo), "--out", p(&out)])), 3);
}

#[test]
fn zero_step_training_writes_only_the_initial_checkpoint() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let cfg = write(t.path(), "train.toml", &train_toml(0, 1));
    let out = t.path().join("run");
    let o = styleeq(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["final.ckpt", "run_manifest.json", "train_config.toml"]);
    let ck = styleeq_core::Checkpoint::load(&out.join("final.ckpt")).unwrap();
    assert_eq!(ck.step, 0);
}

#[test]
fn tampered_dataset_is_refused() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let rec = data.join("records.jsonl");
    let mut text = fs::read_to_string(&rec).unwrap();
    text = text.replacen("\"seed\":", "\"seed\": ", 1);
    fs::write(&rec, text).unwrap();
    let cfg = write(t.path(), "train.toml", &train_toml(1, 0));
    let o = styleeq(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&t.path().join("run"))]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("integrity"), "{}", stderr(&o));
}

#[test]
fn resumed_training_matches_a_single_run() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let full = write(t.path(), "full.toml", &train_toml(200, 100));
    let o = styleeq(&["train", "--config", p(&full), "--data", p(&data), "--out", p(&t.path().join("full"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let half = t.path().join("full/ckpt-000100.ckpt");
    let o = styleeq(&[
        "train", "--config", p(&full), "--data", p(&data), "--out", p(&t.path().join("resumed")), "--resume", p(&half),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(t.path().join("full/final.ckpt")).unwrap(), fs::read(t.path().join("resumed/final.ckpt")).unwrap());
    let lines = fs::read_to_string(t.path().join("resumed/metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 100);
}

#[test]
fn generation_modes_and_argument_checks() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let ck = checkpoint(t.path(), &data);
    let (ck, data) = (p(&ck).to_string(), p(&data).to_string());
    let base = |out: &str| -> Vec<String> {
        ["generate", "--checkpoint", &ck, "--references", &data, "--out", out, "--seed", "5"].iter().map(|s| s.to_string()).collect()
    };
    let run = |a: Vec<String>, extra: &[&str]| {
        let mut a = a;
        a.extend(extra.iter().map(|s| s.to_string()));
        styleeq(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let out = t.path().join("x");
    let o = run(base(p(&out)), &["--mode", "replicate", "--content", "1,2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--ref"), "{}", stderr(&o));

    let (rep, int) = (t.path().join("rep"), t.path().join("int"));
    assert_eq!(code(&run(base(p(&rep)), &["--mode", "replicate", "--content", "1,2", "--ref", "0"])), 0);
    let o = run(base(p(&int)), &["--mode", "interpolate", "--content", "1,2", "--ref", "0", "--ref2", "1", "--alpha", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["sample-000.json", "sample-000.svg"] {
        assert_eq!(fs::read(rep.join(f)).unwrap(), fs::read(int.join(f)).unwrap(), "{f}");
    }

    assert_eq!(code(&run(base(p(&out)), &["--mode", "prior", "--content", "1", "--alpha", "0.5"])), 2);

    let batch = t.path().join("batch");
    let mut a = vec!["generate", "--checkpoint", &ck, "--out", p(&batch), "--mode", "prior"];
    let contents: Vec<String> = (0..10).map(|i| format!("{i},{}", (i + 1) % 10)).collect();
    for c in &contents {
        a.extend(["--content", c.as_str()]);
    }
    assert_eq!(code(&styleeq(&a)), 0);
    let count = |ext: &str| fs::read_dir(&batch).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(ext)).count();
    assert_eq!(count(".svg"), 10);
    assert_eq!(count(".json"), 12);
    let man: serde_json::Value = serde_json::from_slice(&fs::read(batch.join("generation_manifest.json")).unwrap()).unwrap();
    assert_eq!(man.as_array().unwrap().len(), 10);

    let primed = t.path().join("primed");
    assert_eq!(code(&run(base(p(&primed)), &["--mode", "primed", "--content", "3", "--ref", "2"])), 0);
}

#[test]
fn eval_reports_and_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let ck = checkpoint(t.path(), &data);
    let run = |out: &str, extra: &[&str]| {
        let mut a = vec!["eval", "--checkpoint", p(&ck), "--data", p(&data), "--out", out, "--num-pairs", "3", "--seed", "1"];
        a.extend(extra);
        styleeq(&a)
    };
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    assert_eq!(code(&run(p(&a), &["--setting", "parallel"])), 0);
    assert_eq!(code(&run(p(&b), &["--setting", "parallel"])), 0);
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    assert_eq!(code(&run(p(&a), &["--setting", "sideways"])), 2);
    assert_eq!(code(&run(p(&b), &["--setting", "nonparallel", "--max-ger=-1"])), 5);
    let missing = t.path().join("none.ckpt");
    let o = styleeq(&["eval", "--checkpoint", p(&missing), "--data", p(&data), "--out", p(&a), "--setting", "parallel"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn render_and_attention_dump() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let ck = checkpoint(t.path(), &data);
    let r = t.path().join("render");
    assert_eq!(code(&styleeq(&["render", "--data", p(&data), "--out", p(&r)])), 0);
    assert!(r.join("sample-005.svg").exists());
    let d = t.path().join("att");
    let o = styleeq(&[
        "dump-attention", "--checkpoint", p(&ck), "--references", p(&data), "--ref", "1", "--setting", "nonparallel", "--out", p(&d),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dump: serde_json::Value = serde_json::from_slice(&fs::read(d.join("attention.json")).unwrap()).unwrap();
    assert_eq!(dump["heads"], 2);
    assert!(fs::read_to_string(d.join("attention.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn ablation_tabulates_every_variant() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let base = train_head(2, 0);
    let cfg = format!(
        "train_data = {:?}\neval_data = {:?}\nnum_pairs = 2\nseed = 4\n\n[base]\n{base}\n{}\n[[variant]]\nname = \"self\"\nx_prime_mode = \"always_self\"\n\n[[variant]]\nname = \"eq\"\nx_prime_mode = \"real_sample\"\nequalize_fraction = 0.5\n",
        p(&data),
        p(&data),
        MODEL.replace("[model]", "[base.model]")
    );
    let cfg = write(t.path(), "ablation.toml", &cfg);
    let out = t.path().join("abl");
    let o = styleeq(&["ablation", "--config", p(&cfg), "--out", p(&out)]);
    assert!(matches!(code(&o), 0 | 5), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("ablation.txt").exists());
}
