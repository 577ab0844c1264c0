//! Per-image latency, throughput and energy of tiled inference.
//!
//! Tiles run sequentially, so an image costs `avg_tiles` times the per-tile
//! figures of a device profile, plus an optional fixed per-image overhead for
//! cropping, resampling and fusion.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ImageAnnotations;
use crate::geom::Nba;
use crate::tiling::{plan_dataset, PlanOptions, StatsSource, TilePlan};
use crate::{Error, Result};

/// Measured cost of one inference for a (network, input resolution) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub network: String,
    #[serde(default)]
    pub processor: Option<String>,
    /// Square network input side; `None` when the measurement does not state it.
    pub input_resolution: Option<u32>,
    /// Seconds.
    pub latency_per_tile: f64,
    /// Joules; `None` when not measured.
    pub energy_per_tile: Option<f64>,
    #[serde(default)]
    pub source: Option<String>,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.latency_per_tile.is_finite() && self.latency_per_tile > 0.0) {
            return Err(Error::InvalidValue(format!(
                "profile `{}`: latency per tile must be positive",
                self.name
            )));
        }
        if let Some(e) = self.energy_per_tile {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::InvalidValue(format!(
                    "profile `{}`: energy per tile must be non-negative",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub avg_tiles: f64,
    /// Seconds.
    pub latency_per_image: f64,
    pub fps: f64,
    /// Joules.
    pub energy_per_image: Option<f64>,
}

const BUILTIN: &str = include_str!("../data/profiles.json");

/// Profiles shipped with the crate.
pub fn builtin_profiles() -> Vec<DeviceProfile> {
    parse_profiles(BUILTIN).expect("built-in profile table is valid")
}

pub fn parse_profiles(text: &str) -> Result<Vec<DeviceProfile>> {
    let profiles: Vec<DeviceProfile> = serde_json::from_str(text)?;
    for p in &profiles {
        p.validate()?;
    }
    Ok(profiles)
}

pub fn read_profiles(path: &Path) -> Result<Vec<DeviceProfile>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profiles(&text)
}

pub fn find_profile<'a>(profiles: &'a [DeviceProfile], name: &str) -> Result<&'a DeviceProfile> {
    profiles.iter().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<&str> = profiles.iter().map(|p| p.name.as_str()).collect();
        Error::InvalidValue(format!(
            "unknown profile `{name}` (known: {})",
            known.join(", ")
        ))
    })
}

pub fn estimate(avg_tiles: f64, profile: &DeviceProfile) -> Result<CostEstimate> {
    estimate_with_overhead(avg_tiles, profile, 0.0)
}

/// As [`estimate`], adding `overhead` seconds per image.
pub fn estimate_with_overhead(avg_tiles: f64, profile: &DeviceProfile, overhead: f64) -> Result<CostEstimate> {
    profile.validate()?;
    if !(avg_tiles.is_finite() && avg_tiles > 0.0) {
        return Err(Error::InvalidValue(format!(
            "average tile count must be positive, got {avg_tiles}"
        )));
    }
    if !(overhead.is_finite() && overhead >= 0.0) {
        return Err(Error::InvalidValue(format!(
            "per-image overhead must be non-negative, got {overhead}"
        )));
    }
    let latency_per_image = avg_tiles * profile.latency_per_tile + overhead;
    Ok(CostEstimate {
        avg_tiles,
        latency_per_image,
        fps: 1.0 / latency_per_image,
        energy_per_image: profile.energy_per_tile.map(|e| avg_tiles * e),
    })
}

pub fn mean_tile_count(plans: &[TilePlan]) -> Result<f64> {
    if plans.is_empty() {
        return Err(Error::Empty("tile plans"));
    }
    Ok(plans.iter().map(|p| p.tile_count() as f64).sum::<f64>() / plans.len() as f64)
}

/// Mean number of tiles per image when the dataset is planned at `target_nba`.
pub fn avg_tiles(
    images: &[ImageAnnotations],
    target_nba: Nba,
    input_resolution: u32,
    source: StatsSource,
    opts: PlanOptions,
) -> Result<f64> {
    let plans = plan_dataset(images, target_nba, input_resolution, source, opts)?;
    mean_tile_count(&plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Annotation;
    use crate::geom::{BBox, ImageDims};

    fn profile(latency: f64) -> DeviceProfile {
        DeviceProfile {
            name: "p".into(),
            network: "n".into(),
            processor: None,
            input_resolution: Some(192),
            latency_per_tile: latency,
            energy_per_tile: Some(1e-3),
            source: None,
        }
    }

    #[test]
    fn estimate_examples() {
        let e = estimate(4.1, &profile(0.0162)).unwrap();
        assert!((e.fps - 15.06).abs() < 0.005);
        assert_eq!(format!("{:.1}", e.fps), "15.1");

        let e = estimate(4.1, &profile(0.00731)).unwrap();
        assert!((e.latency_per_image - 0.029971).abs() < 1e-9);
        assert_eq!(format!("{:.1}", e.fps), "33.4");

        let e = estimate(1.0, &profile(1.0)).unwrap();
        assert_eq!(e.fps, 1.0);
        assert_eq!(e.energy_per_image, Some(1e-3));
    }

    #[test]
    fn overhead_is_additive() {
        let e = estimate_with_overhead(2.0, &profile(0.01), 0.005).unwrap();
        assert!((e.latency_per_image - 0.025).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(estimate(0.0, &profile(0.01)).is_err());
        assert!(estimate(1.0, &profile(0.0)).is_err());
        assert!(estimate_with_overhead(1.0, &profile(0.01), -1.0).is_err());
    }

    #[test]
    fn builtin_table_loads() {
        let ps = builtin_profiles();
        let ty = find_profile(&ps, "tinyissimoyolo-gap9").unwrap();
        assert_eq!(ty.latency_per_tile, 0.0162);
        let fomo = find_profile(&ps, "fomo-gap9-192").unwrap();
        assert_eq!(fomo.input_resolution, Some(192));
        assert!(ps.iter().all(|p| p.source.is_some()));
        assert!(find_profile(&ps, "nope").is_err());
    }

    fn image(id: &str, w: u32, h: u32, side: f64) -> ImageAnnotations {
        ImageAnnotations {
            image_id: id.into(),
            dims: ImageDims::new(w, h).unwrap(),
            boxes: vec![Annotation {
                class_id: 1,
                bbox: BBox::new(0.0, 0.0, side, side).unwrap(),
            }],
        }
    }

    #[test]
    fn avg_tiles_examples() {
        // 800x800 with a 40 px object: target 4x its NBA gives a 400 px tile,
        // overlap demand 60 px, so 3x3 tiles.
        let a = image("a", 800, 800, 40.0);
        let t = Nba::new(4.0 * 1600.0 / 640_000.0).unwrap();
        let n = avg_tiles(&[a.clone(), a.clone()], t, 192, StatsSource::PerImage, PlanOptions::default()).unwrap();
        assert_eq!(n, 9.0);

        // Mixed: one whole-image tile and one 2x2 plan.
        let whole = image("w", 400, 400, 40.0);
        let t_whole = Nba::new(1600.0 / 160_000.0).unwrap();
        let p1 = plan_dataset(&[whole], t_whole, 192, StatsSource::PerImage, PlanOptions::default()).unwrap();
        assert_eq!(p1[0].tile_count(), 1);
        let p4 = crate::tiling::plan_tiles("q", ImageDims::new(400, 400).unwrap(), 200, 0.0, 192).unwrap();
        assert_eq!(p4.tile_count(), 4);
        assert_eq!(mean_tile_count(&[p1[0].clone(), p4]).unwrap(), 2.5);

        assert!(mean_tile_count(&[]).is_err());
    }
}
