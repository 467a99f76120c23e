//! `styleeq`: data synthesis, training, generation and evaluation.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use styleeq_core::evaluation::EvalSetting;

/// Exit status of a failed command.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Validation(String),
    MissingInput(String),
    Threshold(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Validation(_) => 3,
            Failure::MissingInput(_) => 4,
            Failure::Threshold(_) => 5,
            Failure::Runtime(_) => 6,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) | Failure::MissingInput(m) | Failure::Threshold(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<styleeq_core::Error> for Failure {
    fn from(e: styleeq_core::Error) -> Self {
        use styleeq_core::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidInput(_) | E::TooShort { .. } | E::Format { .. } | E::HashMismatch { .. } => Failure::Validation(msg),
            E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => Failure::MissingInput(msg),
            E::Io { .. } | E::NonFinite { .. } => Failure::Runtime(msg),
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "styleeq", version, about = "Style-equalized handwriting generation on synthetic glyphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every command accepts.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Structured-text config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Root seed; overrides the config's seed when given.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (the numerics run on one thread; recorded for provenance).
    #[arg(long, env = "STYLEEQ_THREADS", default_value_t = 1)]
    pub threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(Common),
    /// Train a model.
    Train(TrainArgs),
    /// Generate handwriting from a checkpoint.
    Generate(GenerateArgs),
    /// Score a checkpoint with the oracles.
    Eval(EvalArgs),
    /// Train and compare x' variants.
    Ablation(Common),
    /// Record style-attention weights over one generation.
    DumpAttention(DumpArgs),
    /// Render dataset records to SVG.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Optional validation dataset directory.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Replicate,
    Interpolate,
    Prior,
    Primed,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Comma-separated glyph ids; repeat for a batch.
    #[arg(long, required = true)]
    pub content: Vec<String>,
    /// Dataset directory holding the references.
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Index of the (source) reference.
    #[arg(long = "ref")]
    pub reference: Option<usize>,
    /// Index of the interpolation target reference.
    #[arg(long = "ref2")]
    pub target: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    pub std_scale: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_frames: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluation dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_setting)]
    pub setting: EvalSetting,
    #[arg(long, default_value_t = 100)]
    pub num_pairs: usize,
    /// Replace the style input by a zero frame (no-style baseline).
    #[arg(long)]
    pub zero_style: bool,
    /// Fail with the threshold exit code when the mean glyph error rate exceeds this.
    #[arg(long)]
    pub max_ger: Option<f64>,
    #[arg(long)]
    pub max_slant_error: Option<f64>,
    #[arg(long)]
    pub max_scale_error: Option<f64>,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long = "ref")]
    pub reference: usize,
    #[arg(long, value_parser = parse_setting)]
    pub setting: EvalSetting,
    /// Content for the nonparallel setting; defaults to the next record's content.
    #[arg(long)]
    pub content: Option<String>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
}

fn parse_setting(s: &str) -> Result<EvalSetting, String> {
    s.parse().map_err(|e: styleeq_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(c) => commands::synth(&c),
        Command::Train(a) => commands::train(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablation(c) => commands::ablation(&c),
        Command::DumpAttention(a) => commands::dump_attention(&a),
        Command::Render(a) => commands::render(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
