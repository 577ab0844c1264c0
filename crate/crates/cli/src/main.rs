//! `adaptile`: adaptive tiling pipeline from ground truth to cost estimates.
//!
//! Exit status: 0 on success, 1 on invalid input or configuration, 2 on
//! filesystem errors.

mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{data, detect, plan, report};
use crate::config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "adaptile", version, about = "Adaptive tiling for small-object detection")]
struct Cli {
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true, env = "ADAPTILE_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for per-image work; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert CARPK-style annotations into a canonical dataset file.
    Ingest(data::IngestArgs),
    /// Generate a synthetic parking-lot dataset.
    Synth(data::SynthArgs),
    /// Plan overlapping tiles for every image.
    Plan(plan::PlanArgs),
    /// Cut and resample tile crops from PPM images.
    Crop(plan::CropArgs),
    /// Run the simulated detector on every tile.
    Simulate(detect::SimulateArgs),
    /// Fuse per-tile predictions into image-level detections.
    Fuse(detect::FuseArgs),
    /// Score fused detections against ground truth.
    Eval(report::EvalArgs),
    /// Plan, detect, fuse and score over target areas and strategies.
    Sweep(report::SweepArgs),
    /// Estimate per-image latency, throughput and energy.
    Cost(report::CostArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build()?;
    pool.install(|| match &cli.command {
        Command::Ingest(a) => data::ingest(&cfg, a),
        Command::Synth(a) => data::synth(&cfg, a),
        Command::Plan(a) => plan::plan(&cfg, a),
        Command::Crop(a) => plan::crop(&cfg, a),
        Command::Simulate(a) => detect::simulate(&cfg, a),
        Command::Fuse(a) => detect::fuse(&cfg, a),
        Command::Eval(a) => report::eval(&cfg, a),
        Command::Sweep(a) => report::sweep(&cfg, a),
        Command::Cost(a) => report::cost(&cfg, a),
    })
}

fn is_io(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<adaptile::Error>().is_some_and(adaptile::Error::is_io)
            || e.downcast_ref::<std::io::Error>().is_some()
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_io(&e) { 2 } else { 1 })
        }
    }
}
