use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Anonymize, enrich and classify Spanish dermatology reports.
///
/// Every option can also be set in a TOML file passed with --config; flags
/// given on the command line take precedence over the file, which takes
/// precedence over the defaults shown here.
#[derive(Debug, Parser)]
#[command(name = "dermcascade", version, max_term_width = 100)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Directory for artifacts and run manifests.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Top-level seed; every random choice derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Strip digits and mask names in a corpus (writes anon.jsonl).
    Anonymize(AnonymizeArgs),
    /// Derive type, severity and site for every corpus label (writes relations.tsv).
    Relations(RelationsArgs),
    /// Generate a synthetic relation-annotated corpus (writes synthetic.jsonl).
    Synth(SynthArgs),
    /// Train a cascade, optionally searching all orders (writes pipeline/).
    Train(TrainArgs),
    /// Run a trained cascade over a corpus (writes predictions.jsonl).
    Infer(InferArgs),
    /// Score predictions against a labeled corpus (writes report.json, confusion.csv).
    Evaluate(EvaluateArgs),
    /// Evaluate across class-frequency thresholds (writes sweep.csv).
    Sweep(SweepArgs),
    /// Render an evaluation report as text and a confusion heatmap.
    Report(ReportArgs),
    /// Serve the builtin classifier over the backend protocol.
    ServeBuiltin(ServeArgs),
    /// Check an external backend against the protocol conformance suite.
    Conformance(ConformanceArgs),
}

#[derive(Debug, Args)]
pub struct HyperparamArgs {
    /// Mini-batch size.
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// SGD learning rate.
    #[arg(long, default_value_t = 0.001)]
    pub learning_rate: f64,
    /// Training epochs.
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// L2 penalty weight.
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// `builtin`, `loopback`, `tcp://HOST:PORT`, or a command line speaking
    /// the backend protocol on stdio.
    #[arg(long, default_value = "builtin")]
    pub backend: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// k for top-k accuracy and F1.
    #[arg(short, long, default_value_t = 2)]
    pub k: usize,
    /// Labels macro-F1 averages over: truth or union.
    #[arg(long, default_value = "truth")]
    pub macro_over: String,
}

#[derive(Debug, Args)]
pub struct AnonymizeArgs {
    /// Input corpus (.jsonl or .csv).
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Masking rules TOML, or `bundled`.
    #[arg(long, default_value = "bundled")]
    pub rules: String,
    /// Where to write the masking audit (default: OUT/masking.json).
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RelationsArgs {
    /// Corpus whose labels are looked up.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Spanish to English translation TSV, or `bundled`.
    #[arg(long, default_value = "bundled")]
    pub translations: String,
    /// Ontology snapshot JSON (repeatable), or `bundled`.
    #[arg(long = "snapshot", default_value = "bundled")]
    pub snapshots: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Relation table TSV, or `bundled`.
    #[arg(long, default_value = "bundled")]
    pub table: String,
    /// Use the first N diseases of the table.
    #[arg(long, default_value_t = 25)]
    pub classes: usize,
    /// Reports per disease.
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    /// Probability that each cue token is replaced by filler.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training corpus; held-out reports are written to OUT/test.jsonl.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Relation table used to annotate the corpus (skip if already annotated).
    #[arg(long, value_name = "FILE")]
    pub relations: Option<PathBuf>,
    /// Cascade order such as `t,sit,gr`, or `search` to try all orders.
    #[arg(long, default_value = "search")]
    pub order: String,
    /// Keep only labels with at least this many reports.
    #[arg(long, default_value_t = 61)]
    pub threshold: usize,
    /// Order-search criterion: accuracy or macro_f1.
    #[arg(long, default_value = "accuracy")]
    pub selection: String,
    #[command(flatten)]
    pub hyperparams: HyperparamArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Pipeline bundle directory (default: OUT/pipeline).
    #[arg(long, value_name = "DIR")]
    pub pipeline: Option<PathBuf>,
    /// Reports to classify.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Relation table used to annotate the corpus for oracle mode.
    #[arg(long, value_name = "FILE")]
    pub relations: Option<PathBuf>,
    /// oracle or predictive.
    #[arg(long, default_value = "predictive")]
    pub mode: String,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions written by `infer`.
    #[arg(long, value_name = "FILE")]
    pub pred: Option<PathBuf>,
    /// Corpus with the true labels.
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Corpus to sweep over.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Relation table used to annotate the corpus.
    #[arg(long, value_name = "FILE")]
    pub relations: Option<PathBuf>,
    /// Comma-separated minimum class sizes.
    #[arg(long, default_value = "2,10,25,50,61,75,100", value_delimiter = ',')]
    pub thresholds: Vec<usize>,
    /// `vanilla` or an explicit cascade order.
    #[arg(long, default_value = "vanilla")]
    pub order: String,
    /// oracle or predictive (cascade orders only).
    #[arg(long, default_value = "predictive")]
    pub mode: String,
    #[command(flatten)]
    pub hyperparams: HyperparamArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation report JSON (default: OUT/report.json).
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen on HOST:PORT instead of stdio.
    #[arg(long, value_name = "HOST:PORT")]
    pub listen: Option<String>,
}

#[derive(Debug, Args)]
pub struct ConformanceArgs {
    /// Backend endpoint: `loopback`, `tcp://HOST:PORT` or a command line.
    #[arg(long)]
    pub backend: String,
}
