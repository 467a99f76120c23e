use criterion::{criterion_group, criterion_main, Criterion};
use styleeq_bench::samples;
use styleeq_core::inference::{generate_replicate, GenerationConfig};
use styleeq_core::styleeq::conv_encode;
use styleeq_core::synthglyph::{builtin_templates, decode_content_oracle, fit_style_oracle, OracleGrid};
use styleeq_core::training::{prepare, TrainConfig, Trainer};
use styleeq_core::ModelParams;

fn train_step(c: &mut Criterion) {
    let set = samples(32, 1, 3);
    let cfg = TrainConfig { batch_size: 16, ..TrainConfig::default() };
    let data = prepare(&set, &cfg.model).unwrap();
    let mut tr = Trainer::new(cfg, &data).unwrap();
    c.bench_function("train_step_b16", |b| b.iter(|| tr.train_step().unwrap()));
}

fn generation(c: &mut Criterion) {
    let set = samples(2, 3, 3);
    let params = ModelParams::init(&Default::default(), 3).unwrap();
    let gcfg = GenerationConfig { max_frames: 40, ..GenerationConfig::default() };
    c.bench_function("replicate_40_frames", |b| b.iter(|| generate_replicate(&set[0].content, &set[1].strokes, &params, &gcfg).unwrap()));
}

fn encoder(c: &mut Criterion) {
    let set = samples(1, 8, 8);
    let params = ModelParams::init(&Default::default(), 3).unwrap();
    c.bench_function("conv_encode_8_glyphs", |b| b.iter(|| conv_encode(&params, &set[0].strokes).unwrap()));
}

fn oracles(c: &mut Criterion) {
    let set = samples(1, 3, 3);
    let (t, grid) = (builtin_templates(), OracleGrid::default());
    c.bench_function("decode_content_3_glyphs", |b| b.iter(|| decode_content_oracle(&set[0].strokes, &t, &grid).unwrap()));
    c.bench_function("fit_style_3_glyphs", |b| b.iter(|| fit_style_oracle(&set[0].strokes, &t, &grid).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = train_step, generation, encoder, oracles
}
criterion_main!(benches);
