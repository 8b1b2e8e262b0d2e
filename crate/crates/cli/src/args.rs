use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hmt_core::corpus::TokenizerMode;
use hmt_core::DecodeMode;

#[derive(Debug, Parser)]
#[command(name = "hmt", version, about = "Hierarchical multi-label classification of multi-document records")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic taxonomy and train/valid/test corpus.
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus a per-epoch metrics log.
    Train(TrainArgs),
    /// Predict label paths for a corpus file or a single record.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Serve predictions over HTTP.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Greedy,
    Constrained,
}

impl From<Mode> for DecodeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Greedy => DecodeMode::Greedy,
            Mode::Constrained => DecodeMode::Constrained,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Tokenizer {
    Words,
    Characters,
}

impl From<Tokenizer> for TokenizerMode {
    fn from(t: Tokenizer) -> Self {
        match t {
            Tokenizer::Words => TokenizerMode::Words,
            Tokenizer::Characters => TokenizerMode::Characters,
        }
    }
}

/// Where the taxonomy lives. `--data DIR` implies `DIR/taxonomy.json`.
#[derive(Clone, Debug, Args)]
pub struct DataArgs {
    /// Directory written by `hmt gen`.
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

impl DataArgs {
    pub fn taxonomy_path(&self) -> PathBuf {
        self.taxonomy
            .clone()
            .unwrap_or_else(|| self.data.join("taxonomy.json"))
    }

    pub fn split(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.data.join(format!("{name}.jsonl")))
    }
}

#[derive(Clone, Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overwrite existing files.
    #[arg(long)]
    pub force: bool,
    /// Children per node at each level.
    #[arg(long, value_delimiter = ',', default_value = "4,3,2")]
    pub branching: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    pub signature_tokens: usize,
    #[arg(long, default_value_t = 0.6)]
    pub signal_strength: f64,
    #[arg(long, default_value_t = 0.25)]
    pub variable_depth_fraction: f64,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 250)]
    pub valid: usize,
    #[arg(long, default_value_t = 250)]
    pub test: usize,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training split (default DATA/train.jsonl).
    #[arg(long = "train")]
    pub train_file: Option<PathBuf>,
    /// Validation split (default DATA/valid.jsonl). Pass an empty file to
    /// keep the final parameters instead of the best-validation ones.
    #[arg(long = "valid")]
    pub valid_file: Option<PathBuf>,
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    /// Metrics log, one JSON object per epoch.
    #[arg(long, default_value = "metrics.jsonl")]
    pub log: PathBuf,
    /// Start from the full-scale settings instead of the desk-scale ones.
    #[arg(long)]
    pub full_scale: bool,
    /// Seeds both initialisation and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Word vectors in text format to copy into the embedding table.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub tokenizer: Option<Tokenizer>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// First level scored by the loss.
    #[arg(long)]
    pub start_level: Option<usize>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Clone, Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    /// Corpus file (JSONL). Gold labels, if present, are ignored.
    #[arg(long, conflicts_with = "doc")]
    pub input: Option<PathBuf>,
    /// A single record given inline as TYPE=TEXT; repeat per document.
    #[arg(long, value_name = "TYPE=TEXT")]
    pub doc: Vec<String>,
    /// Expert-supplied leading labels, e.g. `F,F01`.
    #[arg(long, value_delimiter = ',')]
    pub prefix: Vec<String>,
    #[arg(long, value_enum, default_value = "greedy")]
    pub mode: Mode,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Output file (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Labelled split to score (default DATA/test.jsonl).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "model.ckpt", conflicts_with = "predictions")]
    pub checkpoint: PathBuf,
    /// Score an existing `hmt predict` output instead of running the model.
    /// No expert sweep is possible in this case.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "greedy")]
    pub mode: Mode,
    /// Expert prefix lengths for the sweep.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub prefix_lengths: Vec<usize>,
    #[arg(long, default_value = "reports")]
    pub report_dir: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "HMT_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
}
