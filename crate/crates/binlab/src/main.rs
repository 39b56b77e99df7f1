use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use binlab::config::{analyze_mc, parse_network_file, parse_suite_file, parse_train_file};
use binlab::csvio::{
    ablate_rows, analyze_rows, emit_csv, train_rows, ABLATE_HEADER, ANALYZE_HEADER, TRAIN_HEADER,
};
use binlab::runner::{load_data, measure_parallel, run_ablation};
use binlab::{verify, worker_count, Result};

/// Binary-dense-network laboratory: gradient checks, variance measurement,
/// training, and normalizer ablations.
#[derive(Parser)]
#[command(name = "binlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gradient-check and equivalence suite.
    Verify(VerifyArgs),
    /// Measure per-layer gradient variance at initialization (CSV report).
    Analyze(AnalyzeArgs),
    /// Train a network from a config file on a dataset spec (CSV report).
    Train(TrainArgs),
    /// Run a (normalizer x variance) ablation suite (CSV report).
    Ablate(AblateArgs),
}

#[derive(Args)]
struct VerifyArgs {
    /// Relative tolerance for the finite-difference checks.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Network spec file (key=value).
    #[arg(long)]
    spec: PathBuf,
    /// Monte-Carlo trials (at least 30).
    #[arg(long)]
    trials: usize,
    /// Batch size per trial.
    #[arg(long)]
    batch: usize,
    /// Master seed; trial t uses stream (seed, t).
    #[arg(long)]
    seed: u64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config file (key=value).
    #[arg(long)]
    config: PathBuf,
    /// Dataset spec file (key=value).
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Suite file: base config, inline data keys, and the grid.
    #[arg(long)]
    suite: PathBuf,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify(args) => {
            let results = verify::run_suite(args.tolerance);
            Ok(verify::report(&results))
        }
        Command::Analyze(args) => {
            let text = std::fs::read_to_string(&args.spec)?;
            let mut network = parse_network_file(&text)?;
            let mut mc = analyze_mc(args.trials, args.batch, args.seed);
            mc.input_dist = network.input_dist;
            network.spec.batch_size = args.batch;
            let workers = worker_count();
            let started = Instant::now();
            let report = measure_parallel(&network.spec, &network.scheme, &mc, workers)?;
            eprintln!(
                "analyze: {} trials x batch {} over {} workers in {:.2}s ({})",
                mc.trials,
                mc.batch_size,
                workers,
                started.elapsed().as_secs_f64(),
                report.note
            );
            emit_csv(args.out.as_deref(), ANALYZE_HEADER, &analyze_rows(&report))?;
            Ok(true)
        }
        Command::Train(args) => {
            let config = parse_train_file(&std::fs::read_to_string(&args.config)?)?;
            let source = binlab::config::parse_data_file(&std::fs::read_to_string(&args.data)?)?;
            let data = load_data(&source)?;
            let started = Instant::now();
            let mut record = binlab_core::train::train(&config, &data)?;
            record.wall_seconds = started.elapsed().as_secs_f64();
            eprintln!(
                "train: {} epochs in {:.2}s, best accuracy {:.4}{}",
                record.epochs.len(),
                record.wall_seconds,
                record.best_test_accuracy,
                if record.failed { " (run failed: non-finite loss)" } else { "" }
            );
            emit_csv(args.out.as_deref(), TRAIN_HEADER, &train_rows(&record))?;
            Ok(true)
        }
        Command::Ablate(args) => {
            let suite = parse_suite_file(&std::fs::read_to_string(&args.suite)?)?;
            let started = Instant::now();
            let rows = run_ablation(&suite)?;
            eprintln!(
                "ablate: {} cells x {} seeds in {:.2}s",
                rows.len(),
                suite.seeds,
                started.elapsed().as_secs_f64()
            );
            emit_csv(args.out.as_deref(), ABLATE_HEADER, &ablate_rows(&rows))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
