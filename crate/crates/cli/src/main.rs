mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maple::error::ErrorKind;

#[derive(Parser, Debug)]
#[command(name = "maple", version, about = "Few-shot claim verification from seq2seq training dynamics")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Root directory for every stage's outputs.
    #[arg(long, short, global = true)]
    output_dir: Option<PathBuf>,
    /// FEVER, cFEVER, SciFact_oracle or SciFact_retrieved.
    #[arg(long, short, global = true)]
    dataset: Option<String>,
    /// More log output; repeat for trace level.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a pair file, split it and write the split under <output>/data.
    Prepare(PrepareArgs),
    /// Fine-tune in both directions and record per-epoch mutations.
    Evolve(EvolveArgs),
    /// Score triples with a pair metric into a feature matrix.
    Transform(TransformArgs),
    /// Run the few-shot experiment matrix.
    Run(RunArgs),
    /// Aggregate a results directory into tables and a plot.
    Report(ReportArgs),
    /// Write a synthetic labelled pair file.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub abstracts: Option<PathBuf>,
    #[arg(long)]
    pub retrieve_k: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub subsample: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct EvolveArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Skip the untrained checkpoint.
    #[arg(long)]
    pub no_epoch_zero: bool,
    /// Model id, local directory, or `scratch:tiny`.
    #[arg(long)]
    pub base_model: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_length: Option<usize>,
    #[arg(long)]
    pub lora_rank: Option<usize>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct TransformArgs {
    #[arg(long)]
    pub metric: Option<String>,
    /// Sentence encoder id, local directory, or `hash:<dim>`.
    #[arg(long)]
    pub encoder: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DistanceArg {
    Cosine,
    Euclidean,
}

#[derive(Args, Debug, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub encoder: Option<String>,
    /// Comma-separated: MAPLE, SEED.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub shots: Option<Vec<usize>>,
    #[arg(long)]
    pub first_seed: Option<u64>,
    #[arg(long)]
    pub num_seeds: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub seed_encoder: Option<String>,
    #[arg(long, value_enum)]
    pub seed_distance: Option<DistanceArg>,
}

#[derive(Args, Debug, Default)]
pub struct ReportArgs {
    /// Results directory; defaults to <output>/results.
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Backend => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .init();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
