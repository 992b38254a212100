use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "facetrank",
    version,
    about = "Faceted retrieval and reranking for precision-medicine literature search"
)]
pub struct Cli {
    /// Key-value config file (`key = value` per line, keys are long flag
    /// names). Command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads. Inference defaults to all cores, training to 1.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Log level for progress on stderr (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the BM25 index over a JSONL corpus.
    Index(IndexArgs),
    /// First-stage eDisMax search for every topic.
    Search(SearchArgs),
    /// Write a synthetic corpus, topics and qrels.
    Synth(SynthArgs),
    /// Train word and entity embeddings (same as `train embed`).
    EmbedTrain(EmbedArgs),
    /// Train a REL, EXT or ABS model, or embeddings.
    #[command(subcommand)]
    Train(TrainCommand),
    /// First stage plus model fusion; writes a TREC run.
    Rerank(RerankArgs),
    /// P@10 and R-Prec of one or more runs.
    Eval(EvalArgs),
    /// Raw diagnostic matrices as CSV.
    #[command(subcommand)]
    Export(ExportCommand),
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Index directory (created if missing).
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub topics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Candidates per topic.
    #[arg(long, default_value_t = 500)]
    pub k: usize,
    /// Expand the query with more-like-this terms from the top hits.
    #[arg(long)]
    pub mlt: bool,
    #[arg(long, default_value_t = 10)]
    pub mlt_terms: usize,
    #[arg(long, default_value_t = 10)]
    pub mlt_docs: usize,
    #[arg(long, default_value = "bm25")]
    pub tag: String,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub docs: usize,
    #[arg(long = "topic-count", default_value_t = 20)]
    pub topic_count: usize,
    /// Output directory for corpus.jsonl, topics.jsonl and qrels.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EmbedArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output vector file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 5)]
    pub negatives: usize,
    #[arg(long, default_value_t = 3)]
    pub min_n: usize,
    #[arg(long, default_value_t = 6)]
    pub max_n: usize,
    #[arg(long, default_value_t = 20_000)]
    pub buckets: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Extra `surface<TAB>MeSH code` lexicon merged with the bundled names.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum TrainCommand {
    Rel(ModelTrainArgs),
    Ext(ModelTrainArgs),
    Abs(AbsTrainArgs),
    Embed(EmbedArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// 12-layer, 768-wide encoder with 384 source tokens.
    Full,
    /// 2-layer, 64-wide models that train on a laptop CPU.
    Desk,
}

#[derive(Args, Debug, Clone)]
pub struct ModelTrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub topics: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint (weights, optimiser state and step).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub profile: Profile,
    /// Training steps (added to the saved step count when resuming).
    #[arg(long, default_value_t = 30_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 12)]
    pub batch: usize,
    /// Maximum encoder input tokens (profile default when unset).
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Negative-class weight (REL 0.15, EXT 0.075 when unset).
    #[arg(long)]
    pub w0: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub w1: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 200)]
    pub eval_every: u64,
    #[arg(long, default_value_t = 0.1)]
    pub plateau_factor: f64,
    #[arg(long, default_value_t = 2)]
    pub plateau_patience: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 5000)]
    pub vocab_size: usize,
    /// Training log CSV (defaults to `<out>.log.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct AbsTrainArgs {
    #[command(flatten)]
    pub common: ModelTrainArgs,
    /// EXT checkpoint whose encoder initialises ABS.
    #[arg(long)]
    pub ext: Option<PathBuf>,
    /// Embedding vectors for the target-token table.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub encoder_lr: f64,
    #[arg(long, default_value_t = 5000)]
    pub target_vocab_size: usize,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct BeamArgs {
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    /// Length-penalty exponent.
    #[arg(long, default_value_t = 0.4)]
    pub alpha: f64,
    /// Coverage-penalty weight.
    #[arg(long, default_value_t = 0.4)]
    pub beta: f64,
    /// Longest target in tokens.
    #[arg(long, default_value_t = 50)]
    pub max_target: usize,
}

#[derive(Args, Debug)]
pub struct RerankArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub topics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub rel: Option<PathBuf>,
    #[arg(long)]
    pub ext: Option<PathBuf>,
    #[arg(long)]
    pub abs: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub no_rel: bool,
    #[arg(long)]
    pub no_abs: bool,
    #[arg(long)]
    pub no_ext: bool,
    #[arg(long)]
    pub mlt: bool,
    /// First-stage candidates per topic.
    #[arg(long, default_value_t = 500)]
    pub k: usize,
    #[arg(long, default_value_t = 60.0)]
    pub rrf_k: f64,
    #[arg(long, default_value_t = 0.5)]
    pub keyword_threshold: f64,
    #[command(flatten)]
    pub beam: BeamArgs,
    /// Directory for per-topic JSON with every candidate's ranks and scores.
    #[arg(long)]
    pub debug_dir: Option<PathBuf>,
    #[arg(long, default_value = "facetrank")]
    pub tag: String,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run file; repeat to compare several runs.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Comparison CSV output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum ExportCommand {
    /// EXT per-token scores for one document.
    Heatmap {
        #[arg(long)]
        ext: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        doc: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// ABS cross-attention (target step x source token) for one facet.
    Attention {
        #[arg(long)]
        abs: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        doc: String,
        /// Facet name or index: disease, gene, demographics, mesh, keywords.
        #[arg(long)]
        facet: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        beam: BeamArgs,
    },
}
