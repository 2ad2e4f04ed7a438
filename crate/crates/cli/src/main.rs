//! `procgraph` command-line interface.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use procgraph::dialog::{DialogKind, DEFAULT_QUESTION};
use procgraph::eval::{TaskKind, DEFAULT_HORIZON};
use procgraph::graph::GraphSource;
use procgraph::mistakes::{DEFAULT_CLEAN_FRACTION, DEFAULT_MAX_ATTEMPTS};
use procgraph::predict::DEFAULT_ALPHA;
use procgraph::recognizer::ConfusionScope;
use procgraph::retrieval::DEFAULT_EMBED_DIM;
use procgraph::textmap::DEFAULT_MAP_THRESHOLD;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "procgraph",
    version,
    about = "Mine procedural task graphs from step annotations and evaluate graph-guided assistance"
)]
pub struct Cli {
    /// Worker threads for parallel stages (default: one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Aligned, human-readable output.
    #[default]
    Table,
    /// One machine-readable record per line.
    Lines,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictOp {
    Tr,
    Ap,
    Pp,
    #[value(name = "pp+")]
    PpPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MistakeArg {
    Action,
    Order,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Branching {
    Chain,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Granularity {
    Video,
    Clip,
}

#[derive(Debug, Args)]
pub struct AnnotationsArg {
    /// Step annotations, one JSON video record per line.
    #[arg(long, env = "PROCGRAPH_ANNOTATIONS")]
    pub annotations: PathBuf,
}

#[derive(Debug, Args)]
pub struct GraphArg {
    /// Graph file written by `build-graph`.
    #[arg(long, env = "PROCGRAPH_GRAPH")]
    pub graph: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecognizerArgs {
    /// Probability that the mock recognizer emits a wrong step.
    #[arg(
        long = "recognizer-noise",
        visible_alias = "noise",
        default_value_t = 0.0
    )]
    pub noise: f64,
    /// Probability that emitted text is surface-perturbed.
    #[arg(long, default_value_t = 0.0)]
    pub paraphrase: f64,
    /// Where wrong steps are drawn from: task or global.
    #[arg(long, default_value = "task")]
    pub confusion_scope: ConfusionScope,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus statistics.
    Stats {
        #[command(flatten)]
        annotations: AnnotationsArg,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Mine a procedural graph from annotations.
    BuildGraph {
        #[command(flatten)]
        annotations: AnnotationsArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "trainset")]
        source: GraphSource,
        /// Restrict mining to these video ids (one per line).
        #[arg(long)]
        ids: Option<PathBuf>,
    },
    /// Graphviz rendering of a graph.
    ExportDot {
        #[command(flatten)]
        graph: GraphArg,
        /// Only this task's subgraph.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay recognizer output onto the graph, step by step.
    #[command(group(ArgGroup::new("input").required(true).args(["stream", "annotations"])))]
    Simulate {
        #[command(flatten)]
        graph: GraphArg,
        /// Recognizer events, one JSON object per line.
        #[arg(long)]
        stream: Option<PathBuf>,
        /// Drive the mock recognizer over these videos instead of a stream.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[command(flatten)]
        recognizer: RecognizerArgs,
        #[arg(long, default_value_t = DEFAULT_MAP_THRESHOLD)]
        map_threshold: f64,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Task, next-step or plan prediction for an observed path.
    Predict {
        #[command(flatten)]
        graph: GraphArg,
        /// Recognizer events (JSON lines) or one step per line.
        #[arg(long)]
        path: PathBuf,
        #[arg(long, value_enum)]
        op: PredictOp,
        /// Task for pp+ (and to scope ap/pp).
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: usize,
        /// Beam width; 1 is greedy.
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_MAP_THRESHOLD)]
        map_threshold: f64,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Streaming dialog samples.
    GenDialog {
        #[command(flatten)]
        annotations: AnnotationsArg,
        #[command(flatten)]
        graph: GraphArg,
        /// narration, negative or multichoice.
        #[arg(long)]
        kind: DialogKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        negatives_per_clip: usize,
        #[arg(long, default_value = DEFAULT_QUESTION)]
        question: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Action-error or order-error samples.
    GenMistakes {
        #[command(flatten)]
        annotations: AnnotationsArg,
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long, value_enum)]
        kind: MistakeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Share of unshuffled order samples.
        #[arg(long, default_value_t = DEFAULT_CLEAN_FRACTION)]
        clean_fraction: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
        max_attempts: usize,
        /// Extra videos whose orderings shuffles must avoid.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the graph detectors on mistake samples.
    Detect {
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<MistakeArg>,
        /// Check order samples against their own task's edges only.
        #[arg(long)]
        use_task: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Benchmark the predictors on held-out videos.
    Evaluate {
        #[command(flatten)]
        graph: GraphArg,
        #[command(flatten)]
        annotations: AnnotationsArg,
        #[arg(long, value_delimiter = ',', default_value = "tr,ar,ap,pp,pp+")]
        tasks: Vec<TaskKind>,
        #[command(flatten)]
        recognizer: RecognizerArgs,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: usize,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long, default_value_t = DEFAULT_MAP_THRESHOLD)]
        map_threshold: f64,
        #[arg(long, default_value_t = DEFAULT_CLEAN_FRACTION)]
        clean_fraction: f64,
        /// Report file (JSON); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-item predictions (JSON lines).
        #[arg(long)]
        items_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Text-to-video retrieval with precision, recall and F1.
    #[command(group(ArgGroup::new("store").required(true).args(["embeddings", "annotations"])))]
    Retrieve {
        /// Embedding records, one JSON object per line.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Embed these videos with the hashing embedder instead.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Granularity::Video)]
        granularity: Granularity,
        /// Queries, one JSON object per line; defaults to one query per task.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_EMBED_DIM)]
        embed_dim: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Sample a corpus from Markov step generators.
    GenSynthetic {
        /// Full generator spec (JSON); overrides the shape flags.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        tasks: usize,
        #[arg(long, default_value_t = 5)]
        actions: usize,
        #[arg(long, default_value_t = 100)]
        videos: usize,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long, value_enum, default_value_t = Branching::Chain)]
        branching: Branching,
        #[arg(long, default_value_t = 2)]
        out_degree: usize,
        #[arg(long, default_value_t = 0.2)]
        terminal_prob: f64,
        #[arg(long)]
        shared_vocab: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Hold out this share of videos into --test-out.
        #[arg(long, default_value_t = 0.0)]
        test_fraction: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        test_out: Option<PathBuf>,
        /// Generator parameters and the Bayes-optimal next-step accuracy.
        #[arg(long)]
        chains_out: Option<PathBuf>,
    },
    /// Render a path as "so far: a → b → c".
    VerbalizePath {
        /// Recognizer events (JSON lines) or one step per line.
        #[arg(long)]
        path: PathBuf,
        /// Map steps onto this graph's nodes first.
        #[arg(long, env = "PROCGRAPH_GRAPH")]
        graph: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAP_THRESHOLD)]
        map_threshold: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match commands::run(cli.command) {
        Ok(()) | Err(CliError::BrokenPipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
