use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ppcpt_core::privacy::calibrate;
use ppcpt_harness::{run_matrix, summarize, ExperimentMatrix, RunOptions};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ppcpt", version, about = "Experiment runner for privacy-preserving CPT Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every cell and seed of a matrix.
    Run {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
        /// Also write final network parameters under `<out>/networks`.
        #[arg(long)]
        save_networks: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Aggregate the logs in a run directory.
    Summarize {
        #[arg(long)]
        out: PathBuf,
        /// Exit with status 2 unless every asserted trend holds.
        #[arg(long)]
        assert_trends: bool,
    },
    /// Print the noise calibration for a privacy budget as JSON.
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        batch: usize,
        #[arg(long)]
        cmax: f64,
        #[arg(long, default_value_t = 1.0)]
        lipschitz: f64,
    },
}

#[derive(Serialize)]
struct CalibrationJson {
    epsilon: f64,
    delta: f64,
    sigma: f64,
    beta: f64,
    k: f64,
    c_max: f64,
    #[serde(rename = "L")]
    lipschitz_l: f64,
    delta_prime: f64,
    sigma_unsquared_norm: f64,
    iterations: usize,
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { matrix, world, out, jobs, save_networks, quiet } => {
            let m = ExperimentMatrix::load(&matrix)?;
            let options = RunOptions { jobs, save_networks, progress: !quiet };
            let summary = run_matrix(&m, &world, &out, &options)
                .with_context(|| format!("running {}", matrix.display()))?;
            println!(
                "{} runs from {} trainings written to {}",
                summary.completed,
                summary.trainings,
                out.display()
            );
            for f in &summary.failures {
                println!("failed: {} seed {}: {}", f.cell, f.seed, f.error);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize { out, assert_trends } => {
            let summary = summarize(&out)?;
            print!("{}", summary.render());
            if assert_trends && !summary.asserted_trends_hold() {
                eprintln!("trend assertion failed");
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Calibrate { epsilon, delta, alpha, batch, cmax, lipschitz } => {
            let report = calibrate(epsilon, delta, lipschitz, cmax, alpha, batch)?;
            let c = report.config;
            let json = CalibrationJson {
                epsilon: c.epsilon,
                delta: c.delta,
                sigma: c.sigma,
                beta: c.beta,
                k: c.k,
                c_max: c.c_max,
                lipschitz_l: c.lipschitz_l,
                delta_prime: report.delta_prime,
                sigma_unsquared_norm: report.sigma_unsquared_norm,
                iterations: report.iterations,
            };
            println!("{}", serde_json::to_string_pretty(&json)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors; 2 is reserved for trend failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
