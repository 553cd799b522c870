//! Experiment harness: run configuration, training and ablation
//! drivers, verification suites, and CSV/SVG reporting for the
//! RIIU grid-world experiments.

pub mod config;
pub mod csvio;
pub mod runs;
pub mod svg;
pub mod verify;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "riiu", about = "Grid-world experiments for reflexive integrated-information units", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run-config file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Comma-separated seed list overriding the config.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seed: Option<Vec<u64>>,
    /// Output directory overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the full stack and write logs, checkpoint, and plot.
    Train,
    /// Compare window lengths 8, 32, and 64.
    AblateBuffer,
    /// Compare the full unit against the no-meta ablation.
    AblateMeta,
    /// Run the gradient, composition, and ascent verification suites.
    Verify,
    /// Calibrate the surrogate against the bipartition oracle.
    Calibrate,
}

/// Exit codes: 0 success, 1 usage or IO error, 2 property failure,
/// 3 numerical divergence.
pub fn run(cli: Cli) -> i32 {
    let mut cfg = match cli.config {
        Some(path) => match config::RunConfig::load(&path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return 1;
            }
        },
        None => config::RunConfig::default(),
    };
    if let Some(seeds) = cli.seed {
        if let Some(&first) = seeds.first() {
            cfg.calibrate.seed = first;
        }
        cfg.run.seeds = seeds;
    }
    if let Some(out) = cli.out {
        cfg.run.out_dir = out.display().to_string();
    }
    let outcome = match cli.command {
        Command::Train => runs::cmd_train(&cfg).map(|s| {
            println!("{}", s.summary_line());
            0
        }),
        Command::AblateBuffer => runs::cmd_ablate_buffer(&cfg).map(|s| {
            println!("{}", s.summary_line());
            0
        }),
        Command::AblateMeta => runs::cmd_ablate_meta(&cfg).map(|s| {
            println!("{}", s.summary_line());
            0
        }),
        Command::Verify => runs::cmd_verify(&cfg).map(|reports| {
            let mut failed = false;
            for r in &reports {
                println!("{}", r.line());
                failed |= !r.passed;
            }
            if failed {
                2
            } else {
                0
            }
        }),
        Command::Calibrate => runs::cmd_calibrate(&cfg).map(|s| {
            println!("{}", s.summary_line());
            0
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(core) = e.downcast_ref::<riiu_core::Error>() {
                if matches!(core, riiu_core::Error::Diverged(_)) {
                    return 3;
                }
            }
            1
        }
    }
}
