//! Experiment CLI: run configured experiments, evaluate checkpoints, and
//! inspect artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vqc::artifact;
use vqc::config::load_experiment_config;
use vqc::diagnostics;
use vqc::experiments::{report_text, run_experiment};
use vqc::report::ReportRow;
use vqc::{Result, VqcError};

#[derive(Parser)]
#[command(name = "vqc", about = "VQ-VAE collapse experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a flat key-value config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides experiment.out from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel worker count; falls back to VQC_WORKERS, then all cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Evaluate a checkpoint against a dataset export and print a report row.
    Eval { checkpoint: PathBuf, dataset: PathBuf },
    /// Print the contents of a checkpoint in readable form.
    Dump { checkpoint: PathBuf },
}

fn worker_count(cli_workers: Option<usize>) -> usize {
    cli_workers
        .or_else(|| std::env::var("VQC_WORKERS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, workers, seed_override } => {
            let mut cfg = load_experiment_config(&config)?;
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            if let Some(seed) = seed_override {
                cfg.seeds = vec![seed];
            }
            let output = run_experiment(&cfg, worker_count(workers))?;
            print!("{}", report_text(&output.rows));
            for (cell, msg) in &output.diverged {
                eprintln!(
                    "warning: cell {} {} seed {} diverged: {msg}",
                    cell.experiment.name(),
                    cell.arm,
                    cell.seed
                );
            }
            if output.rows.is_empty() && !output.diverged.is_empty() {
                return Err(VqcError::Divergence("all cells diverged".into()));
            }
            Ok(())
        }
        Command::Eval { checkpoint, dataset } => {
            let model = artifact::load_checkpoint(&checkpoint)?;
            let ds = artifact::load_dataset(&dataset)?;
            let (_, test_rows) = ds.train_test_split(ds.spec.seed);
            let report = diagnostics::evaluate(&model, &ds, &test_rows)?;
            let row = ReportRow::from_report("eval", "eval", ds.spec.seed, 0, "final", &report);
            println!("{}", vqc::report::CSV_HEADER);
            println!("{}", row.to_csv());
            Ok(())
        }
        Command::Dump { checkpoint } => {
            let model = artifact::load_checkpoint(&checkpoint)?;
            println!(
                "encoder: {} layers, {} -> {}",
                model.encoder.layers().len(),
                model.encoder.in_dim(),
                model.encoder.out_dim()
            );
            println!(
                "decoder: {} layers, {} -> {}",
                model.decoder.layers().len(),
                model.decoder.in_dim(),
                model.decoder.out_dim()
            );
            println!(
                "codebook: {} tokens of dim {}, gamma {}, initialized {}",
                model.codebook.size(),
                model.codebook.dim(),
                model.codebook.gamma(),
                model.codebook.is_initialized()
            );
            println!("beta: {}", model.beta);
            println!("token_dim: {}", model.token_dim);
            println!("tokens (index,count,values...):");
            for k in 0..model.codebook.size() {
                let vals: Vec<String> =
                    model.codebook.tokens().row(k).iter().map(|v| v.to_string()).collect();
                println!("{k},{},{}", model.codebook.ema_count()[k], vals.join(","));
            }
            Ok(())
        }
    }
}

fn exit_code(err: &VqcError) -> u8 {
    match err {
        VqcError::Config(_) | VqcError::Usage(_) => 2,
        VqcError::Divergence(_) => 3,
        VqcError::Io(_) | VqcError::Format(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
