use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mtf", version, about = "Score, threshold and curate image-text pairs")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each one overrides the matching key of
/// the `--config` file.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Pair shard file or directory of shards.
    #[arg(long, global = true)]
    pub pairs: Option<PathBuf>,
    /// Score JSONL file.
    #[arg(long, global = true)]
    pub scores: Option<PathBuf>,
    /// Comma-separated metrics (itm,odf,ctq,su).
    #[arg(long, global = true)]
    pub metrics: Option<String>,
    /// Scorer base URL, or `mock://` for the in-process mock.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Target retained share per metric, in (0, 1].
    #[arg(long, global = true)]
    pub fraction: Option<f64>,
    /// SINGLE, AND or OR.
    #[arg(long, global = true)]
    pub combiner: Option<String>,
    /// Output file; most commands print to stdout without it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for clustering, sampling and mixture shuffles.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Maximum scoring requests in flight.
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    /// Continue an interrupted `score` run.
    #[arg(long, global = true)]
    pub resume: bool,
    /// Filter spec as inline JSON, or `@path` to a JSON file.
    #[arg(long, global = true)]
    pub spec: Option<String>,
    /// Run data-parallel steps on all cores or on one.
    #[arg(long, global = true, value_enum)]
    pub exec: Option<ExecArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExecArg {
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Rationalization,
    Cot,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score pairs on each metric and write score JSONL.
    Score(ScoreArgs),
    /// Compute per-metric thresholds for a target fraction.
    Threshold,
    /// Keep the pairs (or score records) that pass a filter spec.
    Filter,
    /// Build instruction data for training a scoring model.
    #[command(subcommand)]
    Curate(CurateCommand),
    /// Correlate model scores with human scores.
    Correlate(CorrelateArgs),
    /// Score distribution per metric.
    Report(ReportArgs),
    /// Thresholds and retained counts across several fractions.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Score from dense captions instead of images.
    #[arg(long)]
    pub text_only: bool,
    #[arg(long)]
    pub max_new_tokens: Option<u32>,
    /// Set failed pairs aside instead of aborting the run.
    #[arg(long)]
    pub quarantine: bool,
    /// Embedding table for the cosine-similarity baseline (replaces the
    /// endpoint).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CurateCommand {
    /// k-means over text embeddings; one representative per cluster.
    Cluster(ClusterArgs),
    /// Teacher jobs (prompts) for the selected pairs.
    Jobs(JobsArgs),
    /// Bucket-balanced sample of scored instructions.
    Sample(SampleArgs),
    /// Multi-task instruction mixture.
    Mixture(MixtureArgs),
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Embedding table (binary) or JSONL of `{"id", "embedding"}` rows.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct JobsArgs {
    /// Cluster report whose representatives restrict the pairs.
    #[arg(long)]
    pub select: Option<PathBuf>,
    #[arg(long)]
    pub text_only: bool,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub max_new_tokens: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Instruction JSONL with scores.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub target: Option<usize>,
    /// Buckets at least this large are downsampled.
    #[arg(long)]
    pub downsample_threshold: Option<usize>,
    #[arg(long)]
    pub buckets: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MixtureArgs {
    /// Directory holding one `<pool>.jsonl` per source.
    #[arg(long)]
    pub pools: PathBuf,
    /// Mixture spec JSON; defaults to the standard 50k mixture.
    #[arg(long)]
    pub mixture: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// CSV with header `id,human`.
    #[arg(long)]
    pub human: PathBuf,
    /// Correlate cosine similarities (scaled to 0–100) from this table
    /// instead of `--scores`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Add a seeded permutation test with this many permutations.
    #[arg(long)]
    pub permutations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Also write the long-format CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated fractions; defaults to 0.2,0.25,0.3,0.35,0.4.
    #[arg(long)]
    pub fractions: Option<String>,
}
