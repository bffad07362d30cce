//! `typoparse`: typology vectors, parser training, evaluation and the
//! analysis battery from the command line.
//!
//! Exit status is 0 on success, 1 when the configuration or arguments are
//! invalid (every problem is listed) and 2 when a command fails at run
//! time.

mod commands;
mod config;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use typoparse::TypologyKind;

#[derive(Parser, Debug)]
#[command(name = "typoparse", version, about = "Typology-augmented delexicalized dependency parsing")]
pub struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Derive, cluster or compare typology vectors.
    #[command(subcommand)]
    Typology(TypologyCommand),
    /// Train a parser on the configured training languages.
    Train(TrainArgs),
    /// Per-language UAS/LAS, optionally tested against a baseline.
    Evaluate(EvaluateArgs),
    /// Fine-tune a checkpoint on a few target sentences.
    Finetune(FinetuneArgs),
    /// Oracle best sources and precision@k of typological neighbours.
    Transfer(TransferArgs),
    /// Probe encoder states for WALS values.
    Probe(ProbeArgs),
    /// Write the synthetic mirror-pair treebanks and a toy config.
    Synth(SynthArgs),
}

#[derive(Subcommand, Debug)]
pub enum TypologyCommand {
    /// Vectors of every kind plus corpus-derived WALS values.
    Derive(DeriveArgs),
    /// K-Means one-hots and the cluster geometry report.
    Cluster(ClusterArgs),
    /// Per-feature agreement of two WALS tables.
    Match(MatchArgs),
}

#[derive(Args, Debug)]
pub struct DeriveArgs {
    /// Languages to derive for; all configured languages by default.
    #[arg(long, value_delimiter = ',')]
    pub languages: Vec<String>,
    /// Dominance threshold for corpus-derived values.
    #[arg(long, default_value_t = 0.75)]
    pub delta: f64,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// Vectors TSV to cluster; derived from `cluster_source` otherwise.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    /// Reference WALS CSV; `wals_csv` by default.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Compared WALS CSV; `typology/corpus_wals.csv` under the output
    /// directory by default.
    #[arg(long)]
    pub predicted: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Continue from a resumable checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many updates in this invocation, leaving a
    /// resumable checkpoint.
    #[arg(long)]
    pub stop_after: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Parser checkpoint; `model.ckpt` under the output directory by
    /// default.
    #[arg(long, conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Score existing `{lang}.conllu` predictions instead of parsing.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Languages to evaluate; `test_languages` by default.
    #[arg(long, value_delimiter = ',')]
    pub languages: Vec<String>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Directory of baseline `{lang}.txt` correctness vectors.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, default_value_t = typoparse::analysis::DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    /// Permute whole sentences instead of single arcs.
    #[arg(long)]
    pub sentence_level: bool,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Target language; the first test language by default.
    #[arg(long)]
    pub language: Option<String>,
    #[arg(long, default_value_t = typoparse::parser::FINETUNE_SENTENCES)]
    pub n_sentences: usize,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Split the fine-tuning sentences come from.
    #[arg(long, default_value = "train")]
    pub tune_split: String,
    /// Split pre and post scores are measured on.
    #[arg(long, default_value = "test")]
    pub eval_split: String,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Directory of `{lang}.ckpt` source models.
    #[arg(long)]
    pub models: PathBuf,
    /// Target languages; `test_languages` by default.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Precomputed vector TSVs, one kind each; derived otherwise.
    #[arg(long)]
    pub vectors: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = typoparse::analysis::DEFAULT_KS)]
    pub ks: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Languages to probe; training and test languages by default.
    #[arg(long, value_delimiter = ',')]
    pub languages: Vec<String>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    /// Hold out whole languages rather than sentences.
    #[arg(long)]
    pub held_out_languages: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 150)]
    pub sentences: usize,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    /// Vector kind the toy config feeds the input-feature component.
    #[arg(long, default_value_t = TypologyKind::Directionality)]
    pub kind: TypologyKind,
}

/// A command failure and its exit status.
#[derive(Debug)]
pub enum Failure {
    Invalid(Vec<String>),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

pub fn invalid(problem: impl Into<String>) -> Failure {
    Failure::Invalid(vec![problem.into()])
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(problems)) => {
            for p in &problems {
                eprintln!("error: {p}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
