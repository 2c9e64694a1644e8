//! `blurvel`: synthesize blurred samples, recover camera velocity from their
//! flow and depth, resolve its direction and evaluate it against a trajectory.

mod config;
mod evaluate;
mod solve;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use blurvel_core::disambiguation::{DisambiguationOptions, PhotometricMode, TieBreak};
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{ConfigError, SynthConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;
const EXIT_IO: u8 = 4;

/// Camera velocity from motion blur: synthesis, solving, direction
/// disambiguation and evaluation.
///
/// Exit codes: 0 success, 1 other failure, 2 configuration error,
/// 3 degenerate geometry, 4 I/O error. BLURVEL_THREADS sets the worker count.
#[derive(Parser)]
#[command(name = "blurvel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render blurred samples with flow, depth and twist labels.
    Synth {
        /// TOML configuration; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve each sample's flow and depth for the exposure twist and velocity.
    Solve {
        /// dataset.json files, sample directories or sample.json files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Directory for the per-sample JSON records.
        #[arg(long)]
        out: PathBuf,
        /// Use every n-th pixel row and column.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Exposure time in seconds, overriding each manifest.
        #[arg(long)]
        exposure: Option<f64>,
    },
    /// Pick the temporal direction of each sample's motion from its neighbours.
    Disambiguate {
        /// dataset.json files or sample directories, in sequence order.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = TieBreakArg::Forward)]
        tie_break: TieBreakArg,
        #[arg(long, value_enum, default_value_t = PhotometricArg::Rgb)]
        photometric: PhotometricArg,
    },
    /// Per-axis velocity RMSE of predictions against a TUM trajectory.
    Eval {
        /// Directory of JSON records written by `solve` or `disambiguate`.
        pred: PathBuf,
        /// Ground-truth camera-to-world trajectory in TUM format.
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Timestamp matching tolerance in seconds.
        #[arg(long, default_value_t = blurvel_core::eval::MATCH_TOLERANCE_S)]
        tolerance: f64,
    },
    /// Check the solver's analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        systems: usize,
        #[arg(long, default_value_t = 8)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the summary JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TieBreakArg {
    Forward,
    Backward,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhotometricArg {
    Rgb,
    Luma,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<blurvel_core::Error>() {
            use blurvel_core::Error as E;
            match e {
                E::Degenerate { .. } => return EXIT_DEGENERATE,
                E::Io(_) | E::Image(_) | E::Json(_) | E::Csv(_) | E::Format(_) | E::Parse { .. } => return EXIT_IO,
                _ => {}
            }
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_FAILURE
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("BLURVEL_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError(format!("BLURVEL_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| ConfigError(e.to_string()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth { config, out } => {
            let config = match config {
                Some(path) => SynthConfig::load(&path)?,
                None => SynthConfig::default(),
            };
            let manifest = synth::run(&config, &out)?;
            println!(
                "wrote {} samples ({} skipped) to {}",
                manifest.samples.len(),
                manifest.skipped,
                out.display()
            );
        }
        Command::Solve {
            inputs,
            out,
            stride,
            exposure,
        } => {
            let n = solve::run_solve(&inputs, &out, stride, exposure)?;
            println!("solved {n} samples into {}", out.display());
        }
        Command::Disambiguate {
            inputs,
            out,
            tie_break,
            photometric,
        } => {
            let options = DisambiguationOptions {
                tie_break: match tie_break {
                    TieBreakArg::Forward => TieBreak::Forward,
                    TieBreakArg::Backward => TieBreak::Backward,
                },
                photometric: match photometric {
                    PhotometricArg::Rgb => PhotometricMode::Rgb,
                    PhotometricArg::Luma => PhotometricMode::Luma,
                },
            };
            let n = solve::run_disambiguate(&inputs, &out, options)?;
            println!("disambiguated {n} samples into {}", out.display());
        }
        Command::Eval {
            pred,
            gt,
            out,
            tolerance,
        } => {
            let outcome = evaluate::run_eval(&pred, &gt, &out, tolerance)?;
            let r = &outcome.report;
            println!(
                "matched {} (unmatched: {} predicted, {} ground truth)",
                r.matched, r.unmatched_pred, r.unmatched_gt
            );
            println!("rmse omega [rad/s]: {:.6?}  baseline {:.6?}", r.rmse_omega, outcome.baseline.rmse_omega);
            println!("rmse v     [m/s]:   {:.6?}  baseline {:.6?}", r.rmse_v, outcome.baseline.rmse_v);
        }
        Command::Gradcheck {
            systems,
            size,
            seed,
            out,
        } => {
            let summary = evaluate::run_gradcheck(systems, size, seed)?;
            for (k, s) in summary.systems.iter().enumerate() {
                println!(
                    "system {k}: {} coordinates, max error flow {:.3e} depth {:.3e}",
                    s.coordinates, s.max_flow_error, s.max_depth_error
                );
            }
            if let Some(path) = out {
                blurvel_core::io::write_json(path, &summary)?;
            }
            println!(
                "{}: max error {:.3e} (tolerance {:.0e})",
                if summary.passed { "PASS" } else { "FAIL" },
                summary.max_error,
                summary.tolerance
            );
            if !summary.passed {
                anyhow::bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
