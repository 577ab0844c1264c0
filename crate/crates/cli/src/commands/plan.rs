use std::fs;
use std::path::PathBuf;

use adaptile::costmodel::mean_tile_count;
use adaptile::dataset::ppm::{crop_file_name, crop_tile, read_ppm, write_ppm};
use adaptile::tiling::plan_dataset;
use adaptile::{Error, FORMAT_VERSION};
use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::files::{load_images, pretty_json, read_plans, write_text, PlanFile};

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Output plan file [default: <output-dir>/plan.json].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CropArgs {
    /// Plan file from `plan`.
    #[arg(long)]
    pub plan: PathBuf,
    /// Directory holding `<image_id>.ppm` for every planned image.
    #[arg(long)]
    pub image_dir: PathBuf,
    /// Crop directory [default: <output-dir>/crops].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

pub fn plan(cfg: &RunConfig, args: &PlanArgs) -> Result<()> {
    let images = load_images(cfg)?;
    let plans = plan_dataset(
        &images,
        cfg.target_nba.0,
        cfg.input_resolution,
        cfg.stats_source(),
        cfg.plan_options(),
    )?;
    let text = pretty_json(&PlanFile::new(&plans, cfg.echo()))?;
    let out = cfg.output_path(args.output.as_deref(), "plan.json");
    write_text(&out, &text)?;
    let avg = if plans.is_empty() { 0.0 } else { mean_tile_count(&plans)? };
    println!("{}: {} images, {avg:.2} tiles per image", out.display(), plans.len());
    Ok(())
}

#[derive(Serialize)]
struct CropIndex {
    format: &'static str,
    version: u32,
    config: serde_json::Value,
    crops: Vec<CropEntry>,
}

#[derive(Serialize)]
struct CropEntry {
    image_id: String,
    col: u32,
    row: u32,
    file: String,
}

pub fn crop(cfg: &RunConfig, args: &CropArgs) -> Result<()> {
    let plans = read_plans(&args.plan)?;
    // Decode and check every source image before creating any output.
    let sources = plans
        .par_iter()
        .map(|p| {
            let path = args.image_dir.join(format!("{}.ppm", p.image_id));
            let img = read_ppm(&path).with_context(|| format!("reading {}", path.display()))?;
            if (img.width, img.height) != (p.dims.width, p.dims.height) {
                return Err(Error::Shape(format!(
                    "{} is {}x{} but the plan expects {}x{}",
                    path.display(),
                    img.width,
                    img.height,
                    p.dims.width,
                    p.dims.height
                ))
                .into());
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    let out_dir = cfg.output_path(args.output.as_deref(), "crops");
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    plans
        .par_iter()
        .zip(&sources)
        .try_for_each(|(p, img)| -> Result<()> {
            for t in &p.tiles {
                let c = crop_tile(img, t, p.tile_size, p.input_resolution)?;
                write_ppm(&out_dir.join(crop_file_name(&p.image_id, t)), &c)?;
            }
            Ok(())
        })?;
    let crops: Vec<CropEntry> = plans
        .iter()
        .flat_map(|p| {
            p.tiles.iter().map(|t| CropEntry {
                image_id: p.image_id.clone(),
                col: t.index.col,
                row: t.index.row,
                file: crop_file_name(&p.image_id, t),
            })
        })
        .collect();
    let count = crops.len();
    let index = CropIndex {
        format: "adaptile-crops",
        version: FORMAT_VERSION,
        config: cfg.echo(),
        crops,
    };
    write_text(&out_dir.join("crops.json"), &pretty_json(&index)?)?;
    println!("{}: {count} crops", out_dir.display());
    Ok(())
}
