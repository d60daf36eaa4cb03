//! Batch pipeline for multi-surface lidar reconstruction: generate synthetic
//! observations, reconstruct point clouds, evaluate against ground truth,
//! sweep operating conditions, or run the log-matched-filter baseline.

mod commands;
mod config;
mod outputs;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::Config;
use outputs::Outputs;

/// Output directory fallback when `--out` is not given.
pub const OUT_DIR_ENV: &str = "LIDARPP_OUT_DIR";

#[derive(Parser)]
#[command(name = "lidarpp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key = value configuration file with [section] headers.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (falls back to $LIDARPP_OUT_DIR, then `.`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: cube, response, ground truth.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct a point cloud and background from a cube.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Lidar cube file.
        #[arg(long)]
        cube: PathBuf,
        /// Impulse response file.
        #[arg(long)]
        irf: PathBuf,
        /// Fine-scale iteration count; overrides the config factor.
        #[arg(long)]
        iters: Option<u64>,
        /// Number of scales (1 or 2); overrides the config.
        #[arg(long)]
        scales: Option<usize>,
        /// Also export the point cloud as ASCII PLY.
        #[arg(long)]
        export_ply: bool,
        /// Export per-iteration diagnostics and acceptance tables.
        #[arg(long)]
        export_diagnostics: bool,
        /// Export each scale's intermediate point cloud.
        #[arg(long)]
        export_intermediates: bool,
        /// Fixed-dimension refinement iterations after the MAP (0 = off).
        #[arg(long, default_value_t = 0)]
        refine_iters: u64,
    },
    /// Compare an estimated point cloud (and background) against truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Estimated point cloud CSV.
        #[arg(long)]
        estimate: PathBuf,
        /// Ground-truth point cloud CSV.
        #[arg(long)]
        truth: PathBuf,
        /// Estimated background CSV grid.
        #[arg(long)]
        est_background: Option<PathBuf>,
        /// True background CSV grid.
        #[arg(long)]
        truth_background: Option<PathBuf>,
    },
    /// F_true table over signal-to-background ratios and photon budgets.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads for sweep cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Log-matched-filter baseline estimates.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        irf: PathBuf,
    },
}

fn load_common(common: &Common) -> Result<(Config, Outputs)> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        config.set("run.seed", seed);
    }
    let dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let outputs = Outputs::new(dir)?;
    Ok((config, outputs))
}

fn dispatch(cli: Cli, outputs_slot: &mut Option<Outputs>) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let (config, outputs) = load_common(&common)?;
            let outputs = outputs_slot.insert(outputs);
            commands::generate(&config, outputs)
        }
        Command::Reconstruct {
            common,
            cube,
            irf,
            iters,
            scales,
            export_ply,
            export_diagnostics,
            export_intermediates,
            refine_iters,
        } => {
            let (mut config, outputs) = load_common(&common)?;
            if let Some(v) = iters {
                config.set("sampler.iters", v);
            }
            if let Some(v) = scales {
                config.set("multires.scales", v);
            }
            let outputs = outputs_slot.insert(outputs);
            commands::reconstruct(
                &config,
                outputs,
                &cube,
                &irf,
                commands::ReconstructFlags {
                    export_ply,
                    export_diagnostics,
                    export_intermediates,
                    refine_iters,
                },
            )
        }
        Command::Evaluate { common, estimate, truth, est_background, truth_background } => {
            let (config, outputs) = load_common(&common)?;
            let outputs = outputs_slot.insert(outputs);
            commands::evaluate(
                &config,
                outputs,
                &estimate,
                &truth,
                est_background.as_deref(),
                truth_background.as_deref(),
            )
        }
        Command::Sweep { common, jobs } => {
            let (config, outputs) = load_common(&common)?;
            let outputs = outputs_slot.insert(outputs);
            commands::sweep(&config, outputs, jobs)
        }
        Command::Baseline { common, cube, irf } => {
            let (config, outputs) = load_common(&common)?;
            let outputs = outputs_slot.insert(outputs);
            commands::baseline(&config, outputs, &cube, &irf)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let mut outputs: Option<Outputs> = None;
    if let Err(err) = dispatch(cli, &mut outputs) {
        if let Some(outputs) = &outputs {
            outputs.remove_partial();
        }
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
