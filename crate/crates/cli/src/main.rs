//! `prf`: index, retrieve, rerank, sweep, evaluate and benchmark.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prf_core::evaluation::Metric;
use prf_core::prf_text::{AggregationMethod, TextHandling};
use prf_core::scorer::ModelProfile;

/// Exit codes: 0 success, 1 usage, 2 data error, 3 backend error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "prf",
    version,
    about = "Pseudo-relevance feedback for lexical and dense retrieval"
)]
pub struct Cli {
    /// Seed for the local embedder and the synthetic generator.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Worker threads for per-query work (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build and persist a BM25 inverted index from a TSV corpus.
    IndexLexical {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed every passage of a corpus into an embedding store.
    IndexDense {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// First-stage retrieval, optionally with vector feedback.
    Retrieve {
        #[arg(long, value_enum, default_value_t = RetrieveFlow::Dense)]
        flow: RetrieveFlow,
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        prf: PrfArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Output TREC run file.
        #[arg(long)]
        out: PathBuf,
    },
    /// BM25 candidates rescored by the backend, optionally with feedback.
    Rerank {
        #[arg(long, value_enum, default_value_t = RerankFlow::Plain)]
        flow: RerankFlow,
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        prf: PrfArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid search over feedback parameters, evaluated against qrels.
    Sweep {
        #[arg(long, value_enum)]
        flow: SweepFlow,
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        prf: PrfArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        qrels: PathBuf,
        /// Feedback depths.
        #[arg(long, default_value = "1,3,5,10")]
        k_grid: String,
        /// Rocchio alpha values: start:stop:step or a comma list.
        #[arg(long, default_value = "0.1:1.0:0.1")]
        alpha_grid: String,
        /// Rocchio beta values: start:stop:step or a comma list.
        #[arg(long, default_value = "0.1:1.0:0.1")]
        beta_grid: String,
        #[arg(long, default_value = "ct,ca,sw")]
        handling_grid: String,
        #[arg(long, default_value = "avg,max,borda")]
        aggregate_grid: String,
        /// Metrics reported per grid point.
        #[arg(long, default_value = "map,rr,ndcg@10,recall@100,recall@1000")]
        metrics: String,
        /// Metric the report is sorted by.
        #[arg(long, default_value = "map")]
        metric: Metric,
        #[command(flatten)]
        judging: JudgingArgs,
        /// Skip writing one run file per grid point.
        #[arg(long)]
        no_runs: bool,
        /// Output directory for sweep.csv (and runs).
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a run file against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value = "map,rr,ndcg@10,recall@1000")]
        metrics: String,
        #[command(flatten)]
        judging: JudgingArgs,
        /// Baseline run for a paired t-test per metric.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// CSV output (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-stage query latency of a flow.
    Bench {
        #[arg(long, value_enum)]
        flow: BenchFlow,
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        prf: PrfArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Timed passes over the query set, after one warm-up pass.
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        /// Optional CSV with the summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that a remote model server answers /health.
    ServeCheck {
        #[arg(long, env = "PRF_MODEL_URL", default_value = "http://127.0.0.1:8000")]
        url: String,
        #[arg(long, default_value_t = 5)]
        timeout_secs: u64,
    },
    /// Write a seeded synthetic benchmark (corpus, queries, qrels).
    Synth {
        #[arg(long, default_value_t = 10_000)]
        passages: usize,
        #[arg(long, default_value_t = 50)]
        queries: usize,
        #[arg(long, default_value_t = 200)]
        topics: usize,
        /// Output directory for corpus.tsv, queries.tsv and qrels.txt.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Passage corpus, `id<TAB>text` per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Lexical index (built from --corpus when omitted).
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Embedding store.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Queries, `id<TAB>text` per line.
    #[arg(long)]
    pub queries: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = Backend::Local)]
    pub backend: Backend,
    /// Embedding dimension (local default 128, or the store's; remote must match /health).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, env = "PRF_MODEL_URL", default_value = "http://127.0.0.1:8000")]
    pub url: String,
    /// Token truncation profile: none, bert, repbert, ance.
    #[arg(long, default_value = "none")]
    pub profile: ModelProfile,
    /// Texts per remote request.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
}

#[derive(Args, Debug, Clone)]
pub struct PrfArgs {
    #[arg(long, value_enum, default_value_t = Fusion::Rocchio)]
    pub fusion: Fusion,
    /// Number of feedback passages.
    #[arg(long, default_value_t = 3)]
    pub prf_depth: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value = "ca")]
    pub text_handling: TextHandling,
    #[arg(long, default_value = "avg")]
    pub aggregate: AggregationMethod,
    /// Sliding-window size in tokens.
    #[arg(long, default_value_t = 65)]
    pub window_size: usize,
    #[arg(long, default_value_t = 32)]
    pub stride: usize,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Depth of the first-stage ranking and of output runs.
    #[arg(long, default_value_t = 1000)]
    pub first_stage_k: usize,
    #[arg(long, default_value = "prf")]
    pub run_tag: String,
    #[arg(long, default_value_t = 0.9)]
    pub bm25_k1: f64,
    #[arg(long, default_value_t = 0.4)]
    pub bm25_b: f64,
}

#[derive(Args, Debug, Clone)]
pub struct JudgingArgs {
    /// Minimum grade counted as relevant by binary metrics.
    #[arg(long, default_value_t = 1)]
    pub threshold: u32,
    /// Ranks considered per query.
    #[arg(long, default_value_t = 1000)]
    pub depth: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Local,
    Remote,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    Average,
    Rocchio,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrieveFlow {
    Lexical,
    Dense,
    DensePrf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerankFlow {
    Plain,
    TextPrf,
    VectorPrf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepFlow {
    DensePrf,
    RerankTextPrf,
    RerankVectorPrf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchFlow {
    Lexical,
    Dense,
    DensePrf,
    Rerank,
    RerankTextPrf,
    RerankVectorPrf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        return 1;
    }
    match err.chain().find_map(|e| e.downcast_ref::<prf_core::Error>()) {
        Some(e) if e.is_backend() => 3,
        Some(prf_core::Error::InvalidConfig(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
