//! `mda`: train, evaluate and inspect MDA fusion models.
//!
//! Failures print one JSON line `{"error":{"kind":..,"message":..}}` to
//! stderr and exit with status 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mda_harness::commands::{
    ablation_csv, run_ablation, run_evaluate, run_train_fusion, run_train_unimodal,
    run_weight_report,
};
use mda_harness::evaluate::weight_table;
use mda_harness::speech::{default_speakers, write_spoken_digits, TakeJitter};
use mda_harness::{ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "mda",
    version,
    about = "Modal-domain attention fusion experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one modality's encoder and classifier.
    TrainUnimodal {
        #[arg(long)]
        modality: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the configured fusion over saved uni-modal encoders.
    TrainFusion {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a fusion checkpoint at the given rates.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        noise: f64,
        /// Allow rates that differ from the training rates.
        #[arg(long)]
        mismatch_ok: bool,
    },
    /// Per-class modality weights of an MDA checkpoint.
    WeightReport {
        #[arg(long)]
        checkpoint: PathBuf,
        /// baseline, noise, mask-<modality> or all.
        #[arg(long)]
        scenario: String,
    },
    /// Fusion x eta x noise x seed grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write synthetic spoken-digit clips named `<digit>_<speaker>_<take>.wav`.
    GenAudio {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        takes: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(config: &Path) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(config)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::TrainUnimodal { modality, config } => {
            let (dir, t) = run_train_unimodal(&load(&config)?, &modality)?;
            println!("checkpoint={}", dir.display());
            println!("test_accuracy={}", t.test_accuracy);
        }
        Command::TrainFusion { config } => {
            let cfg = load(&config)?;
            let (dir, m) = run_train_fusion(&cfg)?;
            println!("checkpoint={}", dir.display());
            println!("accuracy={}", m.accuracy);
            println!("macro_f1={}", m.macro_f1);
        }
        Command::Evaluate {
            checkpoint,
            eta,
            noise,
            mismatch_ok,
        } => {
            let (path, m) = run_evaluate(&checkpoint, eta, noise, mismatch_ok)?;
            println!("metrics={}", path.display());
            println!("accuracy={}", m.accuracy);
            println!("macro_f1={}", m.macro_f1);
        }
        Command::WeightReport {
            checkpoint,
            scenario,
        } => {
            let (path, rows) = run_weight_report(&checkpoint, &scenario)?;
            println!("weights={}", path.display());
            print!("{}", weight_table(&rows));
        }
        Command::Ablate { config } => {
            let (path, rows) = run_ablation(&load(&config)?)?;
            println!("ablation={}", path.display());
            print!("{}", ablation_csv(&rows));
        }
        Command::GenAudio { out, takes, seed } => {
            let paths = write_spoken_digits(
                &out,
                &default_speakers(),
                takes,
                &TakeJitter::default(),
                seed,
            )?;
            println!("clips={} dir={}", paths.len(), out.display());
        }
    }
    Ok(())
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e: HarnessError = e;
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
