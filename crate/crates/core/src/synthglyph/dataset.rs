//! Seeded datasets and their on-disk format.
//!
//! A dataset directory holds `records.jsonl` (one JSON object per sample) and
//! `manifest.json` (generator version, template hash, generation parameters
//! and the SHA-256 of the records file).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::templates::{builtin_templates, template_hash, GlyphTemplate, NUM_TEMPLATES};
use super::{render_sample, ContentSequence, LabeledSample, StrokeSequence, StyleParams};
use crate::error::{Error, Result};
use crate::rng;

pub const GENERATOR_VERSION: &str = "synthglyph/1";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutMode {
    /// Never sample from the listed cells.
    Exclude,
    /// Sample only from the listed cells.
    Only,
}

/// Cells of a `slant_bins × scale_bins` grid over the sampler's slant and
/// scale ranges, used to carve out unseen styles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Holdout {
    pub mode: HoldoutMode,
    pub slant_bins: usize,
    pub scale_bins: usize,
    /// `(slant_bin, scale_bin)` pairs.
    pub cells: Vec<(usize, usize)>,
}

/// Independent uniform ranges per style axis, with an optional holdout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleSampler {
    pub slant: (f64, f64),
    pub scale: (f64, f64),
    pub speed: (f64, f64),
    pub jitter: (f64, f64),
    pub drift: (f64, f64),
    #[serde(default)]
    pub holdout: Option<Holdout>,
}

impl Default for StyleSampler {
    fn default() -> Self {
        Self {
            slant: StyleParams::SLANT_RANGE,
            scale: StyleParams::SCALE_RANGE,
            speed: StyleParams::SPEED_RANGE,
            jitter: StyleParams::JITTER_RANGE,
            drift: StyleParams::DRIFT_RANGE,
            holdout: None,
        }
    }
}

fn uniform(rng: &mut rng::Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn bin(v: f64, (lo, hi): (f64, f64), bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1)
}

impl StyleSampler {
    /// The same ranges with the holdout mode flipped to its complement.
    pub fn complement(&self) -> Self {
        let mut s = self.clone();
        if let Some(h) = &mut s.holdout {
            h.mode = match h.mode {
                HoldoutMode::Exclude => HoldoutMode::Only,
                HoldoutMode::Only => HoldoutMode::Exclude,
            };
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("slant", self.slant, StyleParams::SLANT_RANGE),
            ("scale", self.scale, StyleParams::SCALE_RANGE),
            ("speed", self.speed, StyleParams::SPEED_RANGE),
            ("jitter", self.jitter, StyleParams::JITTER_RANGE),
            ("drift", self.drift, StyleParams::DRIFT_RANGE),
        ];
        for (name, (lo, hi), (min, max)) in axes {
            if !(lo <= hi && lo >= min && hi <= max) {
                return Err(Error::invalid(format!("sampler range {name}=[{lo}, {hi}] not within [{min}, {max}]")));
            }
        }
        if let Some(h) = &self.holdout {
            if h.slant_bins == 0 || h.scale_bins == 0 {
                return Err(Error::invalid("holdout grid needs at least one bin per axis"));
            }
            if h.cells.iter().any(|&(a, b)| a >= h.slant_bins || b >= h.scale_bins) {
                return Err(Error::invalid("holdout cell outside its grid"));
            }
            if h.mode == HoldoutMode::Only && h.cells.is_empty() {
                return Err(Error::invalid("holdout mode `only` with no cells"));
            }
            if h.mode == HoldoutMode::Exclude && h.cells.len() >= h.slant_bins * h.scale_bins {
                return Err(Error::invalid("holdout excludes every cell"));
            }
        }
        Ok(())
    }

    pub fn in_holdout_cell(&self, s: &StyleParams) -> Option<bool> {
        self.holdout.as_ref().map(|h| {
            let cell = (bin(s.slant, self.slant, h.slant_bins), bin(s.scale, self.scale, h.scale_bins));
            h.cells.contains(&cell)
        })
    }

    fn accepts(&self, s: &StyleParams) -> bool {
        match (&self.holdout, self.in_holdout_cell(s)) {
            (Some(h), Some(inside)) => match h.mode {
                HoldoutMode::Exclude => !inside,
                HoldoutMode::Only => inside,
            },
            _ => true,
        }
    }

    pub fn sample(&self, rng: &mut rng::Rng) -> StyleParams {
        loop {
            let s = StyleParams {
                slant: uniform(rng, self.slant),
                scale: uniform(rng, self.scale),
                speed: uniform(rng, self.speed),
                jitter: uniform(rng, self.jitter),
                baseline_drift: uniform(rng, self.drift),
            };
            if self.accepts(&s) {
                return s;
            }
        }
    }
}

/// Generation parameters; also the `synth` command's config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_samples: usize,
    pub alphabet_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub style: StyleSampler,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len < 1 || self.min_len > self.max_len {
            return Err(Error::invalid(format!(
                "need 1 <= min_len <= max_len, got min_len={} max_len={}",
                self.min_len, self.max_len
            )));
        }
        if self.alphabet_size < 1 || self.alphabet_size > NUM_TEMPLATES {
            return Err(Error::invalid(format!(
                "alphabet_size {} must be in 1..={NUM_TEMPLATES}",
                self.alphabet_size
            )));
        }
        self.style.validate()
    }
}

/// Draws `num_samples` i.i.d. samples. Sample `i` depends only on `(seed, i)`.
pub fn make_dataset(cfg: &DatasetConfig) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    let templates = builtin_templates();
    (0..cfg.num_samples).map(|i| make_sample(cfg, i as u64, &templates)).collect()
}

fn make_sample(cfg: &DatasetConfig, index: u64, templates: &[GlyphTemplate]) -> Result<LabeledSample> {
    let mut r = rng::stream(cfg.seed, "dataset.sample", index);
    let len = r.random_range(cfg.min_len..=cfg.max_len);
    let symbols: Vec<usize> = (0..len).map(|_| r.random_range(0..cfg.alphabet_size)).collect();
    let style = cfg.style.sample(&mut r);
    let seed = rng::derive(cfg.seed, "dataset.render", index);
    let content = ContentSequence::new(symbols, cfg.alphabet_size)?;
    let strokes = render_sample(&content, &style, seed, templates)?;
    Ok(LabeledSample { strokes, content, style, seed })
}

/// One line of `records.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub symbols: Vec<usize>,
    pub style: StyleParams,
    pub seed: u64,
    pub strokes: Vec<[f64; 3]>,
}

impl SampleRecord {
    pub fn from_sample(s: &LabeledSample) -> Self {
        Self { symbols: s.content.symbols.clone(), style: s.style, seed: s.seed, strokes: s.strokes.to_triplets() }
    }

    pub fn into_sample(self, alphabet_size: usize) -> Result<LabeledSample> {
        Ok(LabeledSample {
            strokes: StrokeSequence::from_triplets(&self.strokes)?,
            content: ContentSequence::new(self.symbols, alphabet_size)?,
            style: self.style,
            seed: self.seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub generator_version: String,
    pub template_hash: String,
    pub params: DatasetConfig,
    pub num_records: usize,
    pub records_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_records(samples: &[LabeledSample]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut buf, &SampleRecord::from_sample(s))
            .map_err(|e| Error::Format { what: "record", msg: e.to_string() })?;
        buf.push(b'\n');
    }
    Ok(buf)
}

/// Writes `records.jsonl` and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, cfg: &DatasetConfig, samples: &[LabeledSample]) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = encode_records(samples)?;
    let manifest = DatasetManifest {
        generator_version: GENERATOR_VERSION.to_string(),
        template_hash: template_hash(&builtin_templates()),
        params: cfg.clone(),
        num_records: samples.len(),
        records_sha256: sha256_hex(&bytes),
    };
    let rec_path = dir.join(RECORDS_FILE);
    fs::write(&rec_path, &bytes).map_err(|e| Error::io(&rec_path, e))?;
    let man_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format { what: "manifest", msg: e.to_string() })?;
    text.push('\n');
    fs::write(&man_path, text).map_err(|e| Error::io(&man_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { what: "dataset manifest", msg: e.to_string() })
}

/// Reads a dataset directory, refusing it if the records hash does not match
/// the manifest.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<LabeledSample>)> {
    let manifest = read_manifest(dir)?;
    let path = dir.join(RECORDS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let found = sha256_hex(&bytes);
    if found != manifest.records_sha256 {
        return Err(Error::HashMismatch { path, expected: manifest.records_sha256.clone(), found });
    }
    let samples = read_records(BufReader::new(bytes.as_slice()), manifest.params.alphabet_size)?;
    Ok((manifest, samples))
}

/// Parses line-delimited records.
pub fn read_records(reader: impl BufRead, alphabet_size: usize) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Format { what: "records", msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format { what: "records", msg: format!("line {}: {e}", i + 1) })?;
        out.push(rec.into_sample(alphabet_size)?);
    }
    Ok(out)
}

pub fn write_records(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    let bytes = encode_records(samples)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, seed: u64) -> DatasetConfig {
        DatasetConfig { num_samples: n, alphabet_size: 10, min_len: 1, max_len: 4, style: StyleSampler::default(), seed }
    }

    #[test]
    fn empty_dataset() {
        assert!(make_dataset(&cfg(0, 1)).unwrap().is_empty());
    }

    #[test]
    fn deterministic_and_byte_identical() {
        let a = make_dataset(&cfg(100, 7)).unwrap();
        let b = make_dataset(&cfg(100, 7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(encode_records(&a).unwrap(), encode_records(&b).unwrap());
    }

    #[test]
    fn fixed_length_noiseless() {
        let mut c = cfg(30, 3);
        c.min_len = 3;
        c.max_len = 3;
        c.style.jitter = (0.0, 0.0);
        for s in make_dataset(&c).unwrap() {
            assert_eq!(s.content.len(), 3);
            assert_eq!(s.strokes.pen_down_runs().len(), 3);
        }
    }

    #[test]
    fn rejects_bad_lengths_and_alphabet() {
        let mut c = cfg(1, 0);
        c.min_len = 4;
        c.max_len = 2;
        assert!(make_dataset(&c).is_err());
        let mut c = cfg(1, 0);
        c.alphabet_size = 11;
        assert!(make_dataset(&c).is_err());
    }

    #[test]
    fn holdout_partitions_styles() {
        let mut c = cfg(200, 5);
        c.style.holdout = Some(Holdout { mode: HoldoutMode::Exclude, slant_bins: 4, scale_bins: 4, cells: vec![(0, 0), (1, 2), (3, 3)] });
        let train = make_dataset(&c).unwrap();
        assert!(train.iter().all(|s| c.style.in_holdout_cell(&s.style) == Some(false)));
        let mut e = c.clone();
        e.style = c.style.complement();
        let eval = make_dataset(&e).unwrap();
        assert!(eval.iter().all(|s| e.style.in_holdout_cell(&s.style) == Some(true)));
    }

    #[test]
    fn records_round_trip_through_files() {
        let dir = std::env::temp_dir().join(format!("synthglyph-ds-{}", std::process::id()));
        let c = cfg(12, 9);
        let samples = make_dataset(&c).unwrap();
        write_dataset(&dir, &c, &samples).unwrap();
        let (m, back) = read_dataset(&dir).unwrap();
        assert_eq!(m.num_records, 12);
        assert_eq!(back, samples);
        // Tampering is detected.
        let p = dir.join(RECORDS_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[10] ^= 1;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_dataset(&dir), Err(Error::HashMismatch { .. })));
        fs::remove_dir_all(&dir).ok();
    }
}
