//! Composition of the per-image stages: simulate per tile, map to image
//! coordinates, fuse.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::ImageAnnotations;
use crate::detector::{simulate_grid, simulate_tile, Detection, SimDetectorConfig, GRID_DOWNSAMPLE};
use crate::fusion::{adjacency_fuse, fuse, to_global, FusionConfig};
use crate::geom::BBox;
use crate::tiling::{TileIndex, TilePlan};
use crate::Result;

/// Which simulated detector produces per-tile outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Bounding boxes.
    #[default]
    Box,
    /// Centroid grid; every active cell becomes a cell-sized pseudo box.
    Grid,
}

impl std::str::FromStr for DetectorKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(DetectorKind::Box),
            "grid" => Ok(DetectorKind::Grid),
            _ => Err(crate::Error::InvalidValue(format!(
                "unknown detector kind `{s}` (expected box or grid)"
            ))),
        }
    }
}

/// Score above which a grid cell counts as a detection.
pub const GRID_SCORE_THRESHOLD: f64 = 0.5;

/// Runs the simulated detector on every tile; boxes stay in network input
/// coordinates and carry their source tile.
pub fn simulate_image(
    gt: &ImageAnnotations,
    plan: &TilePlan,
    cfg: &SimDetectorConfig,
    kind: DetectorKind,
) -> Result<BTreeMap<TileIndex, Vec<Detection>>> {
    let mut out = BTreeMap::new();
    for tile in &plan.tiles {
        let dets = match kind {
            DetectorKind::Box => simulate_tile(gt, plan, tile.index, cfg)?,
            DetectorKind::Grid => {
                let grid = simulate_grid(gt, plan, tile.index, cfg)?;
                local_pseudo_boxes(&grid.active_cells(GRID_SCORE_THRESHOLD), &grid, tile.index)?
            }
        };
        out.insert(tile.index, dets);
    }
    Ok(out)
}

fn local_pseudo_boxes(
    cells: &[(usize, usize, usize)],
    grid: &crate::detector::GridPrediction,
    index: TileIndex,
) -> Result<Vec<Detection>> {
    let cell = f64::from(GRID_DOWNSAMPLE);
    cells
        .iter()
        .map(|&(row, col, ch)| {
            let (x, y) = (col as f64 * cell, row as f64 * cell);
            let b = BBox::new(x, y, x + cell, y + cell)?;
            Ok(Detection::new(ch as u32 + 1, b, grid.get(row, col, ch))?.with_tile(index))
        })
        .collect()
}

/// Simulate, map to image coordinates and fuse one image.
pub fn detect_and_fuse(
    gt: &ImageAnnotations,
    plan: &TilePlan,
    sim: &SimDetectorConfig,
    kind: DetectorKind,
    fusion: &FusionConfig,
) -> Result<Vec<Detection>> {
    let per_tile = simulate_image(gt, plan, sim, kind)?;
    fuse(&to_global(plan, &per_tile)?, fusion)
}

/// Baseline for grid outputs: adjacent cells are merged within each tile,
/// tiles are concatenated without cross-tile fusion.
pub fn adjacency_baseline(plan: &TilePlan, per_tile: &BTreeMap<TileIndex, Vec<Detection>>) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (&index, dets) in per_tile {
        let mut one = BTreeMap::new();
        one.insert(index, adjacency_fuse(dets));
        out.extend(to_global(plan, &one)?);
    }
    out.sort_by(Detection::canonical_cmp);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Annotation;
    use crate::geom::ImageDims;
    use crate::tiling::plan_tiles;

    fn scene() -> (ImageAnnotations, TilePlan) {
        let gt = ImageAnnotations {
            image_id: "s".into(),
            dims: ImageDims::new(400, 400).unwrap(),
            boxes: vec![
                Annotation { class_id: 1, bbox: BBox::new(10.0, 10.0, 40.0, 40.0).unwrap() },
                Annotation { class_id: 1, bbox: BBox::new(185.0, 185.0, 215.0, 215.0).unwrap() },
            ],
        };
        let plan = plan_tiles("s", gt.dims, 240, 30.0, 240).unwrap();
        (gt, plan)
    }

    #[test]
    fn perfect_box_pipeline_recovers_ground_truth() {
        let (gt, plan) = scene();
        assert_eq!(plan.tile_count(), 4);
        let per_tile = simulate_image(&gt, &plan, &SimDetectorConfig::perfect(1), DetectorKind::Box).unwrap();
        // The center object is fully inside all four tiles.
        let raw: usize = per_tile.values().map(Vec::len).sum();
        assert_eq!(raw, 5);
        let fused = detect_and_fuse(&gt, &plan, &SimDetectorConfig::perfect(1), DetectorKind::Box, &FusionConfig::default()).unwrap();
        assert_eq!(fused.len(), 2);
        for (d, a) in fused.iter().zip(&gt.boxes) {
            assert!(crate::geom::iou(&d.bbox, &a.bbox) > 1.0 - 1e-9);
        }
    }

    #[test]
    fn grid_pipeline_yields_cell_boxes() {
        let (gt, plan) = scene();
        let per_tile = simulate_image(&gt, &plan, &SimDetectorConfig::perfect(1), DetectorKind::Grid).unwrap();
        for dets in per_tile.values() {
            for d in dets {
                assert_eq!(d.bbox.width(), 8.0);
            }
        }
        let base = adjacency_baseline(&plan, &per_tile).unwrap();
        assert_eq!(base.len(), 5);
    }

    #[test]
    fn detector_kind_parses() {
        assert_eq!("grid".parse::<DetectorKind>().unwrap(), DetectorKind::Grid);
        assert!("yolo".parse::<DetectorKind>().is_err());
    }
}
