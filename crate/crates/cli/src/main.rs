//! `kvsift`: train the toy model and run the cache-eviction experiments.

mod commands;
mod common;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "kvsift", version, about = "Entropy-scored KV-cache eviction experiments")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides KVSIFT_OUT_DIR and the config file).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the toy model and write it with a loss log.
    Train(TrainArgs),
    /// Run the grocery or dialog task across eviction policies.
    Bench(BenchArgs),
    /// Play rock-paper-scissors against a biased player.
    Rps(RpsArgs),
    /// Perplexity of a long stream under each policy.
    Ppl(PplArgs),
    /// Attention-sink profile and entropy-segment analysis.
    Analyze(AnalyzeArgs),
    /// Grocery task with the entropy policy across decay ratios.
    SweepDecay(SweepArgs),
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// Model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct CacheArgs {
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    #[arg(long)]
    pub capacity: Option<usize>,
    #[arg(long)]
    pub n_sink: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Raw-byte training corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Bytes of synthetic corpus when no corpus file is given.
    #[arg(long)]
    pub corpus_bytes: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub trained_len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub cache: CacheArgs,
    /// `grocery` or `dialog`.
    #[arg(long)]
    pub task: Option<String>,
    /// JSON-lines dialogues for the dialog task.
    #[arg(long)]
    pub dialogs: Option<PathBuf>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub filler: Option<usize>,
    /// Runs of the random policy to average.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub few_shot: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write per-turn transcripts as JSON lines.
    #[arg(long)]
    pub transcripts: bool,
}

#[derive(Args, Debug)]
pub struct RpsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub cache: CacheArgs,
    /// `rock`, `paper` or `scissors`.
    #[arg(long)]
    pub player: Option<String>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Always play this move instead of asking the model.
    #[arg(long)]
    pub stub: Option<String>,
}

#[derive(Args, Debug)]
pub struct PplArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Raw-byte text to score.
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Raw-byte text to cut sentences from.
    #[arg(long)]
    pub sentences: Option<PathBuf>,
    #[arg(long)]
    pub n_sentences: Option<usize>,
    /// Accept a model that was never trained.
    #[arg(long)]
    pub allow_untrained: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    pub etas: Option<Vec<f64>>,
    #[arg(long)]
    pub capacity: Option<usize>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub filler: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = common::out_dir(cli.out_dir.as_deref(), &cfg);
    match cli.command {
        Command::Train(a) => commands::train(cfg, a, &out),
        Command::Bench(a) => commands::bench(cfg, a, &out),
        Command::Rps(a) => commands::rps(cfg, a, &out),
        Command::Ppl(a) => commands::ppl(cfg, a, &out),
        Command::Analyze(a) => commands::analyze(cfg, a, &out),
        Command::SweepDecay(a) => commands::sweep_decay(cfg, a, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e) as u8)
        }
    }
}
