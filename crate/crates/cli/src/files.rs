//! Reading inputs and writing outputs. Every command assembles its outputs
//! fully in memory before the first write.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use adaptile::dataset::{read_dataset_json, synth_generate, ImageAnnotations, SynthConfig};
use adaptile::tiling::{TileManifest, TilePlan};
use adaptile::{Error, FORMAT_VERSION};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const PLAN_FORMAT: &str = "adaptile-plan";

/// Tile manifests for a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanFile {
    pub format: String,
    pub version: u32,
    pub config: serde_json::Value,
    pub manifests: Vec<TileManifest>,
}

impl PlanFile {
    pub fn new(plans: &[TilePlan], config: serde_json::Value) -> Self {
        PlanFile {
            format: PLAN_FORMAT.into(),
            version: FORMAT_VERSION,
            config,
            manifests: plans.iter().map(TilePlan::to_manifest).collect(),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Writes a file, creating missing parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

/// The synthetic configuration in effect: the configured one or the default,
/// seeded with the run seed.
pub fn synth_config(cfg: &RunConfig) -> SynthConfig {
    let mut s = cfg.synth.clone().unwrap_or_default();
    s.seed = cfg.seed;
    s
}

/// Ground truth from the dataset file, or generated from the synthetic
/// configuration when no dataset is given.
pub fn load_images(cfg: &RunConfig) -> Result<Vec<ImageAnnotations>> {
    match (&cfg.dataset, &cfg.synth) {
        (Some(path), _) => Ok(read_dataset_json(path).with_context(|| format!("loading {}", path.display()))?),
        (None, Some(_)) => Ok(synth_generate(&synth_config(cfg))?),
        (None, None) => bail!(Error::InvalidValue(
            "no ground truth: pass --dataset or synthetic data flags".into()
        )),
    }
}

pub fn read_plans(path: &Path) -> Result<Vec<TilePlan>> {
    let text = read_text(path)?;
    let file: PlanFile = serde_json::from_str(&text)
        .map_err(Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    if file.format != PLAN_FORMAT {
        bail!(Error::InvalidValue(format!(
            "{}: expected format `{PLAN_FORMAT}`, found `{}`",
            path.display(),
            file.format
        )));
    }
    let plans = file
        .manifests
        .into_iter()
        .map(TilePlan::try_from)
        .collect::<adaptile::Result<Vec<_>>>()?;
    let mut seen = std::collections::HashSet::new();
    for p in &plans {
        if !seen.insert(p.image_id.as_str()) {
            bail!(Error::DuplicateId(p.image_id.clone()));
        }
    }
    Ok(plans)
}

/// Pairs every plan with its ground truth, checking ids and dimensions.
pub fn pair_plans<'a>(
    images: &'a [ImageAnnotations],
    plans: &'a [TilePlan],
) -> Result<Vec<(&'a ImageAnnotations, &'a TilePlan)>> {
    let by_id: HashMap<&str, &ImageAnnotations> = images.iter().map(|i| (i.image_id.as_str(), i)).collect();
    plans
        .iter()
        .map(|p| {
            let img = by_id
                .get(p.image_id.as_str())
                .ok_or_else(|| Error::UnknownImage(p.image_id.clone()))?;
            if img.dims != p.dims {
                bail!(Error::Shape(format!(
                    "plan for `{}` is {}x{} but the image is {}x{}",
                    p.image_id, p.dims.width, p.dims.height, img.dims.width, img.dims.height
                )));
            }
            Ok((*img, p))
        })
        .collect()
}
