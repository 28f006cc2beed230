//! `srtriage`: ingest corpora, learn embeddings, train and apply classifiers.

mod commands;
mod config;
mod exit;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "srtriage", version, about = "Security-related issue classification")]
pub struct Cli {
    /// TOML or JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Global seed, fanned out to every stochastic component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (eval and predict print to stdout without it).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge NVD feeds and issue exports into one corpus JSONL.
    Ingest(IngestArgs),
    /// Tokenize, drop stopwords and stem a corpus.
    Preprocess(PreprocessArgs),
    /// Partition labeled documents into train/validation/test files.
    Split(SplitArgs),
    /// Train skip-gram word embeddings.
    Embed(EmbedArgs),
    /// Train a classifier with early stopping.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled set.
    Eval(EvalArgs),
    /// Score unlabeled text.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// NVD JSON data feed (repeatable).
    #[arg(long, value_name = "FILE")]
    pub nvd: Vec<PathBuf>,
    /// Corpus JSONL with issues or articles (repeatable).
    #[arg(long, value_name = "FILE")]
    pub issues: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Stopword list replacing the built-in English one.
    #[arg(long, value_name = "FILE")]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Stratified random split instead of the temporal one.
    #[arg(long)]
    pub random: bool,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Raw corpus JSONL, preprocessed on the fly.
    #[arg(long, value_name = "FILE", conflicts_with = "tokens", required_unless_present = "tokens")]
    pub corpus: Option<PathBuf>,
    /// Token cache written by `preprocess`.
    #[arg(long, value_name = "FILE")]
    pub tokens: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub embeddings: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub validation: PathBuf,
    /// shallow, deep, alex or alpha.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Tokens kept per document.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Labeled corpus JSONL.
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    /// Report every document source separately as well.
    #[arg(long)]
    pub per_source: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Text to score (repeatable).
    #[arg(long, conflicts_with = "input")]
    pub text: Vec<String>,
    /// One document per line: a JSON object with `text` (and optional `id`) or raw text.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format(|buf, rec| {
            writeln!(
                buf,
                "level={} target={} msg={:?}",
                rec.level().as_str().to_ascii_lowercase(),
                rec.target(),
                rec.args().to_string()
            )
        })
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { exit::OK as u8 });
        }
    };
    init_logging();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit::code_for(&err) as u8)
        }
    }
}
