use std::collections::BTreeMap;
use std::path::PathBuf;

use adaptile::detector::{
    load_external, write_jsonl, Detection, PredictionRecord, PredictionsHeader, FUSED_FORMAT, PREDICTIONS_FORMAT,
};
use adaptile::fusion::{fuse as fuse_detections, to_global};
use adaptile::pipeline::{adjacency_baseline, simulate_image};
use adaptile::tiling::{TileIndex, TilePlan};
use adaptile::Error;
use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;

use crate::config::{DetectorSource, FusionMethod, RunConfig};
use crate::files::{load_images, pair_plans, read_plans, read_text, write_text};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Plan file from `plan`.
    #[arg(long)]
    pub plan: PathBuf,
    /// Per-tile predictions [default: <output-dir>/predictions.jsonl].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Plan file the predictions refer to.
    #[arg(long)]
    pub plan: PathBuf,
    /// Per-tile predictions; defaults to the configured external predictions.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Fused detections [default: <output-dir>/fused.jsonl].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

pub fn simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<()> {
    if cfg.detector != DetectorSource::Simulate {
        return Err(Error::InvalidValue("simulate requires the `simulate` detector".into()).into());
    }
    let images = load_images(cfg)?;
    let plans = read_plans(&args.plan)?;
    let pairs = pair_plans(&images, &plans)?;
    let sim = cfg.sim_config();
    let per_image = pairs
        .par_iter()
        .map(|(gt, plan)| {
            let per_tile = simulate_image(gt, plan, &sim, cfg.detector_kind)?;
            Ok(records_in_plan_order(plan, &per_tile))
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<PredictionRecord> = per_image.into_iter().flatten().collect();
    let text = write_jsonl(&PredictionsHeader::new(PREDICTIONS_FORMAT, cfg.echo()), &records)?;
    let out = cfg.output_path(args.output.as_deref(), "predictions.jsonl");
    write_text(&out, &text)?;
    println!("{}: {} detections over {} images", out.display(), records.len(), plans.len());
    Ok(())
}

fn records_in_plan_order(plan: &TilePlan, per_tile: &BTreeMap<TileIndex, Vec<Detection>>) -> Vec<PredictionRecord> {
    plan.tiles
        .iter()
        .filter_map(|t| per_tile.get(&t.index))
        .flatten()
        .map(|d| PredictionRecord::from_detection(&plan.image_id, d))
        .collect()
}

/// Fuses one image's per-tile detections with the configured method.
pub fn fuse_image(
    cfg: &RunConfig,
    plan: &TilePlan,
    per_tile: &BTreeMap<TileIndex, Vec<Detection>>,
) -> adaptile::Result<Vec<Detection>> {
    let mut out = match cfg.fusion_method {
        FusionMethod::Match => fuse_detections(&to_global(plan, per_tile)?, &cfg.fusion_config()?)?,
        FusionMethod::Adjacency => adjacency_baseline(plan, per_tile)?,
    };
    for d in &mut out {
        d.source_tile = None;
    }
    Ok(out)
}

pub fn fuse(cfg: &RunConfig, args: &FuseArgs) -> Result<()> {
    let input = args
        .input
        .as_ref()
        .or(cfg.predictions.as_ref())
        .ok_or_else(|| Error::InvalidValue("no predictions: pass --input or configure --predictions".into()))?;
    let plans = read_plans(&args.plan)?;
    let text = read_text(input)?;
    let per_tile = load_external(&text, &plans).with_context(|| format!("reading {}", input.display()))?;
    let empty = BTreeMap::new();
    let fused = plans
        .par_iter()
        .map(|plan| {
            let dets = fuse_image(cfg, plan, per_tile.get(&plan.image_id).unwrap_or(&empty))?;
            Ok(dets
                .iter()
                .map(|d| PredictionRecord::from_detection(&plan.image_id, d))
                .collect::<Vec<_>>())
        })
        .collect::<adaptile::Result<Vec<_>>>()?;
    let records: Vec<PredictionRecord> = fused.into_iter().flatten().collect();
    let text = write_jsonl(&PredictionsHeader::new(FUSED_FORMAT, cfg.echo()), &records)?;
    let out = cfg.output_path(args.output.as_deref(), "fused.jsonl");
    write_text(&out, &text)?;
    println!("{}: {} detections over {} images", out.display(), records.len(), plans.len());
    Ok(())
}
