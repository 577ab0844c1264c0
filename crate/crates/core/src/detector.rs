//! Detector abstraction.
//!
//! Two sources produce per-tile detections in network input coordinates:
//! a deterministic simulator driven by ground truth (for verification without
//! trained networks) and a JSON-lines predictions file written by any external
//! detector. Both share one record format, so simulated and real outputs are
//! interchangeable downstream.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::ImageAnnotations;
use crate::geom::{intersection_ratio, BBox};
use crate::rng::keyed_rng;
use crate::tiling::{TileIndex, TilePlan};
use crate::{Error, Result, FORMAT_VERSION};

/// Output stride of grid (centroid) detectors.
pub const GRID_DOWNSAMPLE: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: u32,
    pub bbox: BBox,
    pub confidence: f64,
    pub source_tile: Option<TileIndex>,
}

impl Detection {
    pub fn new(class_id: u32, bbox: BBox, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidValue(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Detection {
            class_id,
            bbox,
            confidence,
            source_tile: None,
        })
    }

    pub fn with_tile(mut self, tile: TileIndex) -> Self {
        self.source_tile = Some(tile);
        self
    }

    /// Total order used wherever output must be canonical: class, then box
    /// `(y_min, x_min, y_max, x_max)`, then higher confidence first, then tile.
    pub fn canonical_cmp(&self, other: &Detection) -> Ordering {
        self.class_id
            .cmp(&other.class_id)
            .then_with(|| self.bbox.canonical_cmp(&other.bbox))
            .then_with(|| other.confidence.total_cmp(&self.confidence))
            .then_with(|| self.source_tile.cmp(&other.source_tile))
    }
}

/// Class scores of a centroid detector on an `n x n` grid.
///
/// Channel `k` holds object class `k + 1`; class 0 is background and has no
/// channel.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPrediction {
    pub grid_n: usize,
    pub num_classes: usize,
    /// Indexed `[(row * grid_n + col) * num_classes + channel]`.
    pub scores: Vec<f64>,
}

impl GridPrediction {
    pub fn zeros(grid_n: usize, num_classes: usize) -> Self {
        GridPrediction {
            grid_n,
            num_classes,
            scores: vec![0.0; grid_n * grid_n * num_classes],
        }
    }

    pub fn from_scores(grid_n: usize, num_classes: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != grid_n * grid_n * num_classes {
            return Err(Error::Shape(format!(
                "{} scores for a {grid_n}x{grid_n}x{num_classes} grid",
                scores.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidValue(format!("score {s} outside [0, 1]")));
        }
        Ok(GridPrediction {
            grid_n,
            num_classes,
            scores,
        })
    }

    /// Grid side for a network input, which must be a multiple of the stride.
    pub fn grid_side(input_resolution: u32) -> Result<usize> {
        if input_resolution == 0 || !input_resolution.is_multiple_of(GRID_DOWNSAMPLE) {
            return Err(Error::Shape(format!(
                "input resolution {input_resolution} is not a positive multiple of {GRID_DOWNSAMPLE}"
            )));
        }
        Ok((input_resolution / GRID_DOWNSAMPLE) as usize)
    }

    fn idx(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.grid_n + col) * self.num_classes + channel
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.scores[self.idx(row, col, channel)]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, v: f64) {
        let i = self.idx(row, col, channel);
        self.scores[i] = v;
    }

    /// Cells (row, col, channel) whose score reaches `threshold`.
    pub fn active_cells(&self, threshold: f64) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for row in 0..self.grid_n {
            for col in 0..self.grid_n {
                for ch in 0..self.num_classes {
                    if self.get(row, col, ch) >= threshold {
                        out.push((row, col, ch));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimDetectorConfig {
    /// Probability that a visible object is not reported.
    pub miss_rate: f64,
    /// Corner jitter standard deviation as a fraction of the box extent.
    pub jitter_sigma: f64,
    /// Mean number of false positives per tile.
    pub fp_per_tile: f64,
    /// Minimum fraction of an object inside a tile for it to be detectable there.
    pub visibility_threshold: f64,
    pub seed: u64,
}

impl Default for SimDetectorConfig {
    fn default() -> Self {
        SimDetectorConfig::perfect(0)
    }
}

impl SimDetectorConfig {
    pub fn perfect(seed: u64) -> Self {
        SimDetectorConfig {
            miss_rate: 0.0,
            jitter_sigma: 0.0,
            fp_per_tile: 0.0,
            visibility_threshold: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidValue(m));
        if !(0.0..1.0).contains(&self.miss_rate) {
            return bad(format!("miss rate {} outside [0, 1)", self.miss_rate));
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return bad(format!("jitter sigma {} must be >= 0", self.jitter_sigma));
        }
        if !(self.fp_per_tile.is_finite() && self.fp_per_tile >= 0.0) {
            return bad(format!("false positives per tile {} must be >= 0", self.fp_per_tile));
        }
        if !(self.visibility_threshold > 0.0 && self.visibility_threshold <= 1.0) {
            return bad(format!(
                "visibility threshold {} outside (0, 1]",
                self.visibility_threshold
            ));
        }
        Ok(())
    }
}

fn tile_rng(cfg: &SimDetectorConfig, domain: &str, image_id: &str, t: TileIndex) -> rand_chacha::ChaCha8Rng {
    keyed_rng(
        cfg.seed,
        domain,
        &[
            image_id.as_bytes(),
            &t.col.to_le_bytes(),
            &t.row.to_le_bytes(),
        ],
    )
}

/// Ground-truth objects visible in a tile: (class, box clipped to the tile).
fn visible_objects(
    gt: &ImageAnnotations,
    rect: &BBox,
    threshold: f64,
) -> Vec<(u32, BBox)> {
    gt.boxes
        .iter()
        .filter(|a| a.bbox.area() > 0.0)
        .filter(|a| intersection_ratio(&a.bbox, rect).is_ok_and(|r| r >= threshold))
        .filter_map(|a| a.bbox.clip(rect).map(|c| (a.class_id, c)))
        .collect()
}

/// Simulated box detector for one tile; boxes are in network input coordinates.
pub fn simulate_tile(
    gt: &ImageAnnotations,
    plan: &TilePlan,
    index: TileIndex,
    cfg: &SimDetectorConfig,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let tile = plan.tile(index)?;
    let mut rng = tile_rng(cfg, "sim-box", &plan.image_id, index);
    let input = plan.input_rect();
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::new();
    for (class_id, clipped) in visible_objects(gt, &tile.rect, cfg.visibility_threshold) {
        // Draw every variate regardless of outcome so one object's fate does
        // not shift the stream for the next.
        let miss = rng.random::<f64>() < cfg.miss_rate;
        let noise: [f64; 4] = std::array::from_fn(|_| jitter.sample(&mut rng));
        if miss {
            continue;
        }
        // Clip away round-off at the tile border so boxes stay inside the input.
        let local = plan.global_to_tile(index, &clipped)?;
        let local = local.clip(&input).unwrap_or(local);
        let (w, h) = (local.width(), local.height());
        let s = cfg.jitter_sigma;
        let d = [noise[0] * s * w, noise[1] * s * h, noise[2] * s * w, noise[3] * s * h];
        let moved = if s > 0.0 {
            let b = BBox::from_corners(
                local.x_min() + d[0],
                local.y_min() + d[1],
                local.x_max() + d[2],
                local.y_max() + d[3],
            )?;
            match b.clip(&input) {
                Some(c) => c,
                None => continue,
            }
        } else {
            local
        };
        let extent = (w * h).sqrt();
        let magnitude = if extent > 0.0 {
            d.iter().map(|v| v.abs()).sum::<f64>() / (4.0 * extent)
        } else {
            0.0
        };
        let confidence = (1.0 - magnitude).clamp(0.5, 1.0);
        out.push(Detection::new(class_id, moved, confidence)?.with_tile(index));
    }
    if cfg.fp_per_tile > 0.0 {
        let count = Poisson::new(cfg.fp_per_tile)
            .map_err(|e| Error::InvalidValue(e.to_string()))?
            .sample(&mut rng) as usize;
        let r = f64::from(plan.input_resolution);
        let class_id = gt.boxes.first().map_or(1, |a| a.class_id);
        for _ in 0..count {
            let side = rng.random_range(0.05..=0.2) * r;
            let x = rng.random_range(0.0..=(r - side));
            let y = rng.random_range(0.0..=(r - side));
            let confidence = rng.random_range(0.3..=0.7);
            out.push(
                Detection::new(class_id, BBox::new(x, y, x + side, y + side)?, confidence)?
                    .with_tile(index),
            );
        }
    }
    Ok(out)
}

/// Simulated centroid detector: one active cell per visible object center.
pub fn simulate_grid(
    gt: &ImageAnnotations,
    plan: &TilePlan,
    index: TileIndex,
    cfg: &SimDetectorConfig,
) -> Result<GridPrediction> {
    cfg.validate()?;
    let n = GridPrediction::grid_side(plan.input_resolution)?;
    let num_classes = gt.boxes.iter().map(|a| a.class_id).max().unwrap_or(1).max(1) as usize;
    let tile = plan.tile(index)?;
    let mut rng = tile_rng(cfg, "sim-grid", &plan.image_id, index);
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let mut grid = GridPrediction::zeros(n, num_classes);
    let stride = f64::from(GRID_DOWNSAMPLE);
    let r = f64::from(plan.input_resolution);
    for (class_id, clipped) in visible_objects(gt, &tile.rect, cfg.visibility_threshold) {
        let miss = rng.random::<f64>() < cfg.miss_rate;
        let noise: [f64; 2] = std::array::from_fn(|_| jitter.sample(&mut rng));
        if miss || class_id == 0 {
            continue;
        }
        let local = plan.global_to_tile(index, &clipped)?;
        let (cx, cy) = local.center();
        let (dx, dy) = (
            noise[0] * cfg.jitter_sigma * local.width(),
            noise[1] * cfg.jitter_sigma * local.height(),
        );
        let (x, y) = ((cx + dx).clamp(0.0, r), (cy + dy).clamp(0.0, r));
        let col = ((x / stride) as usize).min(n - 1);
        let row = ((y / stride) as usize).min(n - 1);
        let extent = (local.width() * local.height()).sqrt();
        let magnitude = if extent > 0.0 {
            (dx.abs() + dy.abs()) / (2.0 * extent)
        } else {
            0.0
        };
        let score = (1.0 - magnitude).clamp(0.5, 1.0);
        let ch = class_id as usize - 1;
        if score > grid.get(row, col, ch) {
            grid.set(row, col, ch, score);
        }
    }
    if cfg.fp_per_tile > 0.0 {
        let count = Poisson::new(cfg.fp_per_tile)
            .map_err(|e| Error::InvalidValue(e.to_string()))?
            .sample(&mut rng) as usize;
        for _ in 0..count {
            let (row, col) = (rng.random_range(0..n), rng.random_range(0..n));
            let ch = rng.random_range(0..num_classes);
            let score = rng.random_range(0.3..=0.7);
            if score > grid.get(row, col, ch) {
                grid.set(row, col, ch, score);
            }
        }
    }
    Ok(grid)
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile: Option<TileIndex>,
    pub class_id: u32,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
}

impl PredictionRecord {
    pub fn from_detection(image_id: &str, d: &Detection) -> Self {
        PredictionRecord {
            image_id: image_id.to_string(),
            tile: d.source_tile,
            class_id: d.class_id,
            bbox: d.bbox,
            confidence: d.confidence,
        }
    }

    pub fn to_detection(&self) -> Result<Detection> {
        let d = Detection::new(self.class_id, self.bbox, self.confidence)?;
        Ok(match self.tile {
            Some(t) => d.with_tile(t),
            None => d,
        })
    }
}

/// Optional first line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionsHeader {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub config: serde_json::Value,
}

pub const PREDICTIONS_FORMAT: &str = "adaptile-predictions";
pub const FUSED_FORMAT: &str = "adaptile-fused";

impl PredictionsHeader {
    pub fn new(format: &str, config: serde_json::Value) -> Self {
        PredictionsHeader {
            format: format.to_string(),
            version: FORMAT_VERSION,
            config,
        }
    }
}

/// Serializes a header plus records as JSON lines.
pub fn write_jsonl(header: &PredictionsHeader, records: &[PredictionRecord]) -> Result<String> {
    let mut s = serde_json::to_string(header)?;
    s.push('\n');
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

/// Per-tile detections keyed by image id then tile index.
pub type TileDetections = BTreeMap<String, BTreeMap<TileIndex, Vec<Detection>>>;

/// Optional header plus `(line number, record)` pairs.
type ParsedRecords = (Option<PredictionsHeader>, Vec<(usize, PredictionRecord)>);

fn parse_records(text: &str) -> Result<ParsedRecords> {
    let mut header = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if value.get("format").is_some() {
            if !out.is_empty() || header.is_some() {
                return Err(Error::Parse {
                    line,
                    msg: "header record must be the first line".into(),
                });
            }
            header = Some(serde_json::from_value(value).map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?);
            continue;
        }
        let rec: PredictionRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        out.push((line, rec));
    }
    Ok((header, out))
}

/// Loads per-tile predictions, validating every record against the tile plans.
pub fn load_external(text: &str, plans: &[TilePlan]) -> Result<TileDetections> {
    let by_id: HashMap<&str, &TilePlan> = plans.iter().map(|p| (p.image_id.as_str(), p)).collect();
    let (_, records) = parse_records(text)?;
    let mut out = TileDetections::new();
    for (line, rec) in records {
        let err = |msg: String| Error::Parse { line, msg };
        let plan = by_id
            .get(rec.image_id.as_str())
            .ok_or_else(|| err(format!("unknown image `{}`", rec.image_id)))?;
        let tile = rec
            .tile
            .ok_or_else(|| err("per-tile record is missing `tile`".into()))?;
        plan.tile(tile).map_err(|e| err(e.to_string()))?;
        if !plan.input_rect().contains(&rec.bbox) {
            return Err(err(format!(
                "box {} outside network input [0, {}]",
                rec.bbox, plan.input_resolution
            )));
        }
        let det = rec.to_detection().map_err(|e| err(e.to_string()))?;
        out.entry(rec.image_id)
            .or_default()
            .entry(tile)
            .or_default()
            .push(det);
    }
    Ok(out)
}

/// Loads a fused (global-coordinate) detections file grouped by image.
pub fn load_fused(text: &str) -> Result<BTreeMap<String, Vec<Detection>>> {
    let (_, records) = parse_records(text)?;
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (line, rec) in records {
        let det = rec.to_detection().map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        out.entry(rec.image_id).or_default().push(det);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Annotation;
    use crate::geom::ImageDims;
    use crate::tiling::plan_tiles;

    fn scene(boxes: &[[f64; 4]]) -> ImageAnnotations {
        ImageAnnotations {
            image_id: "img".into(),
            dims: ImageDims::new(800, 400).unwrap(),
            boxes: boxes
                .iter()
                .map(|b| Annotation {
                    class_id: 1,
                    bbox: BBox::try_from(*b).unwrap(),
                })
                .collect(),
        }
    }

    /// 800x400 image, 400 px tiles at x = 0, 200, 400 (overlap 200), input 200.
    fn plan() -> TilePlan {
        let p = plan_tiles("img", ImageDims::new(800, 400).unwrap(), 400, 100.0, 200).unwrap();
        assert_eq!(p.grid, (3, 1));
        p
    }

    #[test]
    fn perfect_detector_reproduces_inner_box() {
        let gt = scene(&[[50.0, 60.0, 90.0, 100.0]]);
        let p = plan();
        let t = TileIndex::new(0, 0);
        let dets = simulate_tile(&gt, &p, t, &SimDetectorConfig::perfect(1)).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].confidence, 1.0);
        assert_eq!(p.tile_to_global(t, &dets[0].bbox).unwrap(), gt.boxes[0].bbox);
    }

    #[test]
    fn outside_object_not_detected() {
        let gt = scene(&[[700.0, 10.0, 750.0, 50.0]]);
        let dets = simulate_tile(&gt, &plan(), TileIndex::new(0, 0), &SimDetectorConfig::perfect(1)).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn straddling_object_is_clipped() {
        // 40 px wide, 30 px of it inside tile (0,0) which ends at x=400.
        let gt = scene(&[[370.0, 10.0, 410.0, 50.0]]);
        let p = plan();
        let t = TileIndex::new(0, 0);
        let dets = simulate_tile(&gt, &p, t, &SimDetectorConfig::perfect(1)).unwrap();
        assert_eq!(dets.len(), 1);
        let g = p.tile_to_global(t, &dets[0].bbox).unwrap();
        assert_eq!(g, BBox::new(370.0, 10.0, 400.0, 50.0).unwrap());
        assert!(g.area() < gt.boxes[0].bbox.area());
    }

    #[test]
    fn below_visibility_threshold_dropped() {
        // Only 5 of 40 px inside tile (0,0): ratio 0.125 < 0.25.
        let gt = scene(&[[395.0, 10.0, 435.0, 50.0]]);
        let dets = simulate_tile(&gt, &plan(), TileIndex::new(0, 0), &SimDetectorConfig::perfect(1)).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn noisy_detector_is_deterministic() {
        let gt = scene(&[
            [50.0, 60.0, 90.0, 100.0],
            [250.0, 60.0, 290.0, 100.0],
            [450.0, 200.0, 480.0, 260.0],
        ]);
        let cfg = SimDetectorConfig {
            miss_rate: 0.3,
            jitter_sigma: 0.1,
            fp_per_tile: 2.0,
            visibility_threshold: 0.25,
            seed: 42,
        };
        let p = plan();
        let fwd: Vec<_> = p
            .tiles
            .iter()
            .map(|t| simulate_tile(&gt, &p, t.index, &cfg).unwrap())
            .collect();
        let mut rev: Vec<_> = p
            .tiles
            .iter()
            .rev()
            .map(|t| simulate_tile(&gt, &p, t.index, &cfg).unwrap())
            .collect();
        rev.reverse();
        assert_eq!(fwd, rev);
        for d in fwd.iter().flatten() {
            assert!((0.0..=1.0).contains(&d.confidence));
            assert!(p.input_rect().contains(&d.bbox));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let gt = scene(&[]);
        let cfg = SimDetectorConfig {
            miss_rate: 1.0,
            ..SimDetectorConfig::perfect(0)
        };
        assert!(simulate_tile(&gt, &plan(), TileIndex::new(0, 0), &cfg).is_err());
    }

    #[test]
    fn grid_single_object_single_cell() {
        let gt = ImageAnnotations {
            image_id: "g".into(),
            dims: ImageDims::new(384, 384).unwrap(),
            boxes: vec![Annotation {
                class_id: 1,
                bbox: BBox::new(172.0, 172.0, 212.0, 212.0).unwrap(),
            }],
        };
        let p = plan_tiles("g", gt.dims, 384, 10.0, 192).unwrap();
        let g = simulate_grid(&gt, &p, TileIndex::new(0, 0), &SimDetectorConfig::perfect(0)).unwrap();
        assert_eq!(g.grid_n, 24);
        let active = g.active_cells(0.5);
        assert_eq!(active, vec![(12, 12, 0)]);
    }

    #[test]
    fn grid_merges_objects_in_one_cell() {
        // Centers at input (97, 97) and (99, 99): both in cell (12, 12).
        let gt = ImageAnnotations {
            image_id: "g".into(),
            dims: ImageDims::new(192, 192).unwrap(),
            boxes: vec![
                Annotation {
                    class_id: 1,
                    bbox: BBox::new(96.0, 96.0, 98.0, 98.0).unwrap(),
                },
                Annotation {
                    class_id: 1,
                    bbox: BBox::new(98.0, 98.0, 100.0, 100.0).unwrap(),
                },
            ],
        };
        let p = plan_tiles("g", gt.dims, 192, 2.0, 192).unwrap();
        let g = simulate_grid(&gt, &p, TileIndex::new(0, 0), &SimDetectorConfig::perfect(0)).unwrap();
        assert_eq!(g.active_cells(0.5).len(), 1);

        let empty = ImageAnnotations {
            boxes: vec![],
            ..gt
        };
        let g = simulate_grid(&empty, &p, TileIndex::new(0, 0), &SimDetectorConfig::perfect(0)).unwrap();
        assert!(g.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn grid_needs_stride_multiple() {
        let gt = scene(&[]);
        let p = plan_tiles("img", gt.dims, 400, 10.0, 196).unwrap();
        assert!(simulate_grid(&gt, &p, TileIndex::new(0, 0), &SimDetectorConfig::perfect(0)).is_err());
    }

    #[test]
    fn load_external_examples() {
        let plans = vec![plan_tiles("a", ImageDims::new(400, 400).unwrap(), 200, 0.0, 100).unwrap()];
        assert_eq!(plans[0].grid, (2, 2));
        assert!(load_external("", &plans).unwrap().is_empty());

        let text = r#"{"format":"adaptile-predictions","version":1}
{"image_id":"a","tile":[0,0],"class_id":1,"box":[1,1,5,5],"confidence":0.9}
{"image_id":"a","tile":[1,0],"class_id":1,"box":[1,1,5,5],"confidence":0.9}
"#;
        let got = load_external(text, &plans).unwrap();
        assert_eq!(got["a"].len(), 2);
        assert!(got["a"].values().all(|v| v.len() == 1));

        let bad_tile = r#"{"image_id":"a","tile":[9,9],"class_id":1,"box":[1,1,5,5],"confidence":0.9}"#;
        assert!(matches!(load_external(bad_tile, &plans), Err(Error::Parse { line: 1, .. })));

        let bad_image = "\n{\"image_id\":\"zz\",\"tile\":[0,0],\"class_id\":1,\"box\":[1,1,5,5],\"confidence\":0.9}";
        assert!(matches!(load_external(bad_image, &plans), Err(Error::Parse { line: 2, .. })));

        let out_of_range = r#"{"image_id":"a","tile":[0,0],"class_id":1,"box":[1,1,500,5],"confidence":0.9}"#;
        assert!(load_external(out_of_range, &plans).is_err());

        let bad_conf = r#"{"image_id":"a","tile":[0,0],"class_id":1,"box":[1,1,5,5],"confidence":1.5}"#;
        assert!(load_external(bad_conf, &plans).is_err());

        assert!(matches!(load_external("{not json", &plans), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn jsonl_roundtrip() {
        let d = Detection::new(1, BBox::new(1.0, 2.0, 3.0, 4.5).unwrap(), 0.75)
            .unwrap()
            .with_tile(TileIndex::new(1, 0));
        let rec = PredictionRecord::from_detection("a", &d);
        let text = write_jsonl(&PredictionsHeader::new(PREDICTIONS_FORMAT, serde_json::Value::Null), &[rec]).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(
            line,
            r#"{"image_id":"a","tile":[1,0],"class_id":1,"box":[1.0,2.0,3.0,4.5],"confidence":0.75}"#
        );
        let plans = vec![plan_tiles("a", ImageDims::new(400, 400).unwrap(), 200, 0.0, 100).unwrap()];
        let got = load_external(&text, &plans).unwrap();
        assert_eq!(got["a"][&TileIndex::new(1, 0)], vec![d]);
    }
}
