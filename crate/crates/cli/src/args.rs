use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "latim", version, about = "Token attribution for Mamba-1 / Mamba-2 models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a randomly initialized model bundle.
    GenModel(GenModelArgs),
    /// Attribution matrices for one token sequence, as CSV (and PNG).
    Decompose(DecomposeArgs),
    /// Faithfulness of attribution methods on the synthetic copying task.
    EvalCopy(EvalCopyArgs),
    /// Decomposition error per activation strategy and layer.
    ApproxError(ApproxErrorArgs),
}

#[derive(Debug, Args)]
pub struct GenModelArgs {
    #[arg(long)]
    pub variant: String,
    #[arg(long)]
    pub layers: usize,
    #[arg(long)]
    pub dim: usize,
    /// Inner width; defaults to twice `--dim`.
    #[arg(long)]
    pub inner: Option<usize>,
    #[arg(long)]
    pub state: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 4)]
    pub conv: usize,
    #[arg(long)]
    pub vocab: usize,
    #[arg(long)]
    pub dt_rank: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "f64")]
    pub dtype: String,
    /// Forward activation of the model, named by strategy.
    #[arg(long, default_value = "silu")]
    pub strategy: String,
    /// Share the output head with the embedding.
    #[arg(long)]
    pub tied: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct TokenArgs {
    /// Comma- or space-separated token ids.
    #[arg(long, conflicts_with_all = ["tokens_file", "copy_len"])]
    pub tokens: Option<String>,
    /// File of whitespace/comma-separated ids; `#` starts a comment.
    #[arg(long, conflicts_with = "copy_len")]
    pub tokens_file: Option<PathBuf>,
    /// Generate one copying-task sequence with this source length.
    #[arg(long)]
    pub copy_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[command(flatten)]
    pub input: TokenArgs,
    /// Methods: lp:1, lp:2, lp:inf, alti, alti-logit, mamba-attention.
    #[arg(long = "method", value_delimiter = ',', default_value = "alti")]
    pub methods: Vec<String>,
    /// Layer index, `all`, `aggregated`, or `best-by:<auc|ap|r@k>` (copy input only).
    #[arg(long, default_value = "all")]
    pub layer: String,
    #[arg(long, default_value = "silu")]
    pub strategy: String,
    /// Ids whose logits ALTI-Logit explains; defaults to the argmax.
    #[arg(long)]
    pub targets: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Compute hidden attention row by row instead of materializing it.
    #[arg(long)]
    pub stream: bool,
    #[arg(long)]
    pub image: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalCopyArgs {
    /// Required unless `--scores-from-csv` is given.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Score a precomputed attribution CSV instead of running a model.
    #[arg(long, conflicts_with = "bundle")]
    pub scores_from_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 50)]
    pub copy_len: usize,
    #[arg(long = "method", value_delimiter = ',', default_value = "lp:2,alti,alti-logit,mamba-attention")]
    pub methods: Vec<String>,
    #[arg(long, default_value = "all")]
    pub layer: String,
    #[arg(long, default_value = "silu")]
    pub strategy: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub stream: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ApproxErrorArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 50)]
    pub copy_len: usize,
    #[arg(long = "strategy", value_delimiter = ',', default_value = "identity,silu,relu,taylor1,taylor2")]
    pub strategies: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub stream: bool,
    #[arg(long)]
    pub out: PathBuf,
}
