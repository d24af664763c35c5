//! `dialrel`: ingest → segment → pair → serve → agree → model → classify → report.
//!
//! Exit status 2 means a usage error; exit status 1 means a module error, reported
//! on stderr as one JSON line `{"error": code, "detail": message}`.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::Settings;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Module { code: String, detail: String },
}

impl Failure {
    pub fn module(code: &str, detail: impl ToString) -> Self {
        Failure::Module {
            code: code.to_string(),
            detail: detail.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dialrel", version, about = "Discourse relation annotation and analysis for two-party dialogue")]
pub struct Cli {
    /// Output directory shared by all subcommands.
    #[arg(long, global = true, default_value = "dialrel-out")]
    pub out: PathBuf,
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed; each module derives its own seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Normalize transcripts into dialogues.jsonl.
    Ingest(IngestArgs),
    /// Split eligible turns into EDUs (units.jsonl).
    Segment(SegmentArgs),
    /// Build annotation tasks from units (tasks.jsonl).
    Pair(PairArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
    /// Inter-annotator agreement (agreement.tsv, agreement.json).
    Agree(AgreeArgs),
    /// Context models, likelihood-ratio tests and label distributions (model/).
    Model(ModelArgs),
    /// Leave-one-conversation-out relation classification (eval.tsv, eval.json).
    Classify(ClassifyArgs),
    /// Agreement, model, distribution and classifier outputs in report/.
    Report(ReportArgs),
    /// Write a synthetic transcript corpus with its syntactic sidecar.
    SynthCorpus(SynthCorpusArgs),
    /// Annotate every task with simulated teams and write matching embeddings.
    SimulateAnnotations(SimulateArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Ingest these transcripts directly instead of reading dialogues.jsonl.
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
    #[arg(long)]
    pub dialogues: Option<PathBuf>,
    #[arg(long)]
    pub syntax: Option<PathBuf>,
    /// `roots_or_verbs` or `combined_count`.
    #[arg(long)]
    pub eligibility: Option<String>,
}

#[derive(Args, Debug)]
pub struct PairArgs {
    #[arg(long)]
    pub dialogues: Option<PathBuf>,
    #[arg(long)]
    pub units: Option<PathBuf>,
    /// Complex units, one `{"member_ids": [...]}` per line.
    #[arg(long)]
    pub cdus: Option<PathBuf>,
    #[arg(long)]
    pub max_per_dialogue: Option<usize>,
    /// `adjacency` or `all_combinations`.
    #[arg(long)]
    pub strategy: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct StoreArgs {
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Directory holding the annotation logs.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// `document` or `shuffled`.
    #[arg(long)]
    pub order: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct AgreeArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long)]
    pub resamples: Option<usize>,
    /// `per_annotator` or `global`.
    #[arg(long)]
    pub pooling: Option<String>,
    /// `label_marginals` or `bootstrap`.
    #[arg(long)]
    pub soft_chance: Option<String>,
    /// `max` or `mean`.
    #[arg(long)]
    pub augmented_denominator: Option<String>,
    #[arg(long)]
    pub exclude_rejections: bool,
    #[arg(long)]
    pub pair_type: Option<String>,
    #[arg(long)]
    pub team: Option<String>,
    #[arg(long)]
    pub dialogue: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Ridge penalty on non-intercept coefficients.
    #[arg(long)]
    pub penalty: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// `softmax` or `clipped_normalized`.
    #[arg(long)]
    pub mapping: Option<String>,
    /// `argmax` or `threshold:<score>`.
    #[arg(long)]
    pub strict: Option<String>,
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub resamples: Option<usize>,
    #[arg(long)]
    pub penalty: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SynthCorpusArgs {
    #[arg(long)]
    pub dialogues: Option<usize>,
    #[arg(long)]
    pub min_turns: Option<usize>,
    #[arg(long)]
    pub max_turns: Option<usize>,
    #[arg(long)]
    pub backchannel_rate: Option<f64>,
    #[arg(long)]
    pub marker_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long)]
    pub fidelity: Option<f64>,
    #[arg(long)]
    pub rejection_rate: Option<f64>,
    #[arg(long)]
    pub annotators_per_team: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.pick(cli.seed, "seed", 0u64)?;
    let ctx = commands::Context {
        out: cli.out,
        seed,
        settings,
    };
    match cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Segment(a) => commands::segment(&ctx, a),
        Command::Pair(a) => commands::pair(&ctx, a),
        Command::Serve(a) => commands::serve(&ctx, a),
        Command::Agree(a) => commands::agree(&ctx, &a, &ctx.out).map(|_| ()),
        Command::Model(a) => commands::model(&ctx, &a, &ctx.out.join("model")).map(|_| ()),
        Command::Classify(a) => commands::classify(&ctx, &a, &ctx.out).map(|_| ()),
        Command::Report(a) => commands::report(&ctx, a),
        Command::SynthCorpus(a) => commands::synth_corpus(&ctx, a),
        Command::SimulateAnnotations(a) => commands::simulate(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(detail)) => {
            eprintln!("{}", serde_json::json!({"error": "usage", "detail": detail}));
            ExitCode::from(2)
        }
        Err(Failure::Module { code, detail }) => {
            eprintln!("{}", serde_json::json!({"error": code, "detail": detail}));
            ExitCode::from(1)
        }
    }
}
