//! Cross-tile fusion of detections.
//!
//! Overlapping tiles see the same object more than once. Fusion matches
//! detection pairs of the same class, takes the transitive closure of the
//! match relation, and keeps one representative per connected component.
//!
//! Two match criteria are available:
//! - `iou`: symmetric intersection over union.
//! - `one_way_ratio`: the pair matches when either box has at least
//!   `threshold` of its own area inside the other. A border-clipped view of an
//!   object is almost entirely enclosed by the full view from a neighboring
//!   tile, so this criterion links them even when their IoU is small.
//!
//! Grid (centroid) detectors are bridged through cell-sized pseudo boxes. The
//! adjacency fusion kept here merges every 8-connected group of active cells,
//! which is the behavior that collapses tightly parked objects into one.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::detector::{Detection, GridPrediction, GRID_DOWNSAMPLE};
use crate::geom::{intersection_ratio, iou, BBox};
use crate::tiling::{TileIndex, TilePlan};
use crate::unionfind::UnionFind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    Iou,
    OneWayRatio,
}

impl MatchStrategy {
    pub fn default_threshold(self) -> f64 {
        match self {
            MatchStrategy::Iou => 0.25,
            MatchStrategy::OneWayRatio => 0.8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MatchStrategy::Iou => "iou",
            MatchStrategy::OneWayRatio => "one_way_ratio",
        }
    }
}

impl std::str::FromStr for MatchStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iou" => Ok(MatchStrategy::Iou),
            "one_way_ratio" | "ratio" => Ok(MatchStrategy::OneWayRatio),
            _ => Err(Error::InvalidValue(format!("unknown match strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducePolicy {
    /// Keep the member with the largest area, i.e. the least clipped view.
    #[default]
    LargestBox,
    MaxConfidence,
}

impl std::str::FromStr for ReducePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "largest_box" => Ok(ReducePolicy::LargestBox),
            "max_confidence" => Ok(ReducePolicy::MaxConfidence),
            _ => Err(Error::InvalidValue(format!("unknown reduce policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub strategy: MatchStrategy,
    pub threshold: f64,
    pub reduce_policy: ReducePolicy,
}

impl FusionConfig {
    pub fn new(strategy: MatchStrategy, threshold: f64) -> Result<Self> {
        let cfg = FusionConfig {
            strategy,
            threshold,
            reduce_policy: ReducePolicy::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_policy(mut self, policy: ReducePolicy) -> Self {
        self.reduce_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidValue(format!(
                "fusion threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            strategy: MatchStrategy::OneWayRatio,
            threshold: MatchStrategy::OneWayRatio.default_threshold(),
            reduce_policy: ReducePolicy::LargestBox,
        }
    }
}

/// Connected component of the match relation, as indices into the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub members: Vec<usize>,
}

/// One cell-sized box per active grid cell, in image coordinates.
pub fn pseudo_boxes(
    gp: &GridPrediction,
    plan: &TilePlan,
    index: TileIndex,
    score_threshold: f64,
) -> Result<Vec<Detection>> {
    let n = GridPrediction::grid_side(plan.input_resolution)?;
    if gp.grid_n != n {
        return Err(Error::Shape(format!(
            "grid of side {} does not match input resolution {}",
            gp.grid_n, plan.input_resolution
        )));
    }
    let cell = f64::from(GRID_DOWNSAMPLE);
    gp.active_cells(score_threshold)
        .into_iter()
        .map(|(row, col, ch)| {
            let (x, y) = (col as f64 * cell, row as f64 * cell);
            let local = BBox::new(x, y, x + cell, y + cell)?;
            let global = plan.tile_to_global(index, &local)?;
            Ok(Detection::new(ch as u32 + 1, global, gp.get(row, col, ch))?.with_tile(index))
        })
        .collect()
}

/// Closed contact test: true when the boxes overlap or share an edge/corner.
fn touches(a: &BBox, b: &BBox, tol: f64) -> bool {
    a.x_min() <= b.x_max() + tol
        && b.x_min() <= a.x_max() + tol
        && a.y_min() <= b.y_max() + tol
        && b.y_min() <= a.y_max() + tol
}

/// Baseline grid fusion: 8-connected groups of pseudo boxes from one grid are
/// merged into their union bounding box with the maximum member confidence.
pub fn adjacency_fuse(dets: &[Detection]) -> Vec<Detection> {
    let mut out = Vec::new();
    for idx in group_by_class(dets).into_values() {
        let mut uf = UnionFind::new(idx.len());
        for i in 0..idx.len() {
            for j in i + 1..idx.len() {
                let (a, b) = (&dets[idx[i]].bbox, &dets[idx[j]].bbox);
                let side = a.width().min(a.height()).min(b.width()).min(b.height());
                if touches(a, b, 1e-6 * side.max(1.0)) {
                    uf.union(i, j);
                }
            }
        }
        for comp in uf.components() {
            let first = dets[idx[comp[0]]];
            let merged = comp.iter().skip(1).fold(first, |mut acc, &k| {
                let d = &dets[idx[k]];
                acc.bbox = acc.bbox.union_box(&d.bbox);
                acc.confidence = acc.confidence.max(d.confidence);
                acc
            });
            out.push(merged);
        }
    }
    out.sort_by(Detection::canonical_cmp);
    out
}

fn group_by_class(dets: &[Detection]) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        groups.entry(d.class_id).or_default().push(i);
    }
    groups
}

fn ratio_or_zero(a: &BBox, b: &BBox) -> f64 {
    intersection_ratio(a, b).unwrap_or(0.0)
}

/// Match predicate for one pair under `cfg`. Different classes never match.
pub fn is_match(a: &Detection, b: &Detection, cfg: &FusionConfig) -> bool {
    if a.class_id != b.class_id {
        return false;
    }
    match cfg.strategy {
        MatchStrategy::Iou => iou(&a.bbox, &b.bbox) >= cfg.threshold,
        MatchStrategy::OneWayRatio => {
            ratio_or_zero(&a.bbox, &b.bbox).max(ratio_or_zero(&b.bbox, &a.bbox)) >= cfg.threshold
        }
    }
}

/// All matching pairs `(i, j)`, `i < j`, in sorted order. Quadratic.
pub fn match_pairs(dets: &[Detection], cfg: &FusionConfig) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..dets.len() {
        for j in i + 1..dets.len() {
            if is_match(&dets[i], &dets[j], cfg) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Same result as [`match_pairs`], using a uniform grid to prune candidates.
///
/// Any match needs a positive-area intersection (thresholds are positive), so
/// matching boxes always share at least one bucket.
pub fn match_pairs_indexed(dets: &[Detection], cfg: &FusionConfig) -> Vec<(usize, usize)> {
    if dets.len() < 2 {
        return Vec::new();
    }
    let mean_side = dets
        .iter()
        .map(|d| d.bbox.width().max(d.bbox.height()))
        .sum::<f64>()
        / dets.len() as f64;
    let cell = mean_side.max(1.0);
    let bucket = |v: f64| (v / cell).floor() as i64;
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, d) in dets.iter().enumerate() {
        if d.bbox.area() <= 0.0 {
            continue;
        }
        for gy in bucket(d.bbox.y_min())..=bucket(d.bbox.y_max()) {
            for gx in bucket(d.bbox.x_min())..=bucket(d.bbox.x_max()) {
                grid.entry((gx, gy)).or_default().push(i);
            }
        }
    }
    let mut candidates = Vec::new();
    for members in grid.values() {
        for (k, &i) in members.iter().enumerate() {
            for &j in &members[k + 1..] {
                candidates.push((i.min(j), i.max(j)));
            }
        }
    }
    candidates.sort_unstable();
    candidates.dedup();
    candidates
        .into_iter()
        .filter(|&(i, j)| is_match(&dets[i], &dets[j], cfg))
        .collect()
}

/// Connected components over `n` items, ordered by smallest member.
pub fn cluster(n: usize, pairs: &[(usize, usize)]) -> Vec<Cluster> {
    let mut uf = UnionFind::new(n);
    for &(i, j) in pairs {
        uf.union(i, j);
    }
    uf.components()
        .into_iter()
        .map(|members| Cluster { members })
        .collect()
}

/// Tie-break among equally ranked members: `(y_min, x_min, source_tile)`,
/// then the rest of the canonical order so the choice never depends on input order.
fn tie_break(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    a.bbox
        .y_min()
        .total_cmp(&b.bbox.y_min())
        .then(a.bbox.x_min().total_cmp(&b.bbox.x_min()))
        .then(a.source_tile.cmp(&b.source_tile))
        .then_with(|| a.canonical_cmp(b))
}

/// Picks the representative of a cluster; its confidence becomes the cluster maximum.
pub fn reduce(members: &[Detection], policy: ReducePolicy) -> Result<Detection> {
    let best = members
        .iter()
        .min_by(|a, b| {
            let primary = match policy {
                ReducePolicy::LargestBox => b.bbox.area().total_cmp(&a.bbox.area()),
                ReducePolicy::MaxConfidence => b.confidence.total_cmp(&a.confidence),
            };
            primary.then_with(|| tie_break(a, b))
        })
        .ok_or(Error::Empty("cluster"))?;
    let confidence = members
        .iter()
        .map(|d| d.confidence)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Detection {
        confidence,
        ..*best
    })
}

/// Above this many same-class detections, matching switches to the grid index.
const INDEX_THRESHOLD: usize = 64;

/// Full fusion: per class, match, cluster and reduce. Output detections are in
/// image coordinates without a source tile, sorted canonically.
pub fn fuse(dets: &[Detection], cfg: &FusionConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(dets.len());
    for idx in group_by_class(dets).into_values() {
        let group: Vec<Detection> = idx.iter().map(|&i| dets[i]).collect();
        let pairs = if group.len() > INDEX_THRESHOLD {
            match_pairs_indexed(&group, cfg)
        } else {
            match_pairs(&group, cfg)
        };
        for c in cluster(group.len(), &pairs) {
            let members: Vec<Detection> = c.members.iter().map(|&i| group[i]).collect();
            let mut d = reduce(&members, cfg.reduce_policy)?;
            d.source_tile = None;
            out.push(d);
        }
    }
    out.sort_by(Detection::canonical_cmp);
    Ok(out)
}

/// Maps per-tile detections (network input coordinates) into image coordinates.
pub fn to_global(plan: &TilePlan, per_tile: &BTreeMap<TileIndex, Vec<Detection>>) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (&tile, dets) in per_tile {
        for d in dets {
            out.push(Detection {
                bbox: plan.tile_to_global(tile, &d.bbox)?,
                source_tile: Some(tile),
                ..*d
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ImageDims;
    use crate::tiling::{plan_tiles, Tile};

    fn det(b: [f64; 4], conf: f64) -> Detection {
        Detection::new(1, BBox::try_from(b).unwrap(), conf).unwrap()
    }

    fn single_tile_plan(x: u32, y: u32, tile: u32, input: u32) -> TilePlan {
        TilePlan {
            image_id: "p".into(),
            dims: ImageDims::new(2000, 2000).unwrap(),
            tile_size: tile,
            grid: (1, 1),
            tiles: vec![Tile {
                index: TileIndex::new(0, 0),
                x,
                y,
                rect: BBox::new(
                    f64::from(x),
                    f64::from(y),
                    f64::from(x + tile),
                    f64::from(y + tile),
                )
                .unwrap(),
            }],
            input_resolution: input,
            min_overlap: 0.0,
        }
    }

    fn grid_with(cells: &[(usize, usize)]) -> GridPrediction {
        let mut g = GridPrediction::zeros(24, 1);
        for &(r, c) in cells {
            g.set(r, c, 0, 1.0);
        }
        g
    }

    #[test]
    fn pseudo_box_examples() {
        let plan = single_tile_plan(100, 200, 384, 192);
        let t = TileIndex::new(0, 0);
        assert!(pseudo_boxes(&grid_with(&[]), &plan, t, 0.5).unwrap().is_empty());

        let boxes = pseudo_boxes(&grid_with(&[(0, 0)]), &plan, t, 0.5).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].bbox, BBox::new(100.0, 200.0, 116.0, 216.0).unwrap());
        assert_eq!(boxes[0].confidence, 1.0);
        assert_eq!(boxes[0].source_tile, Some(t));

        let two = pseudo_boxes(&grid_with(&[(3, 4), (3, 5)]), &plan, t, 0.5).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[0].bbox.x_max(), two[1].bbox.x_min());
        assert_eq!(two[0].bbox.intersection_area(&two[1].bbox), 0.0);
    }

    #[test]
    fn pseudo_boxes_check_grid_shape() {
        let plan = single_tile_plan(0, 0, 384, 192);
        let g = GridPrediction::zeros(12, 1);
        assert!(pseudo_boxes(&g, &plan, TileIndex::new(0, 0), 0.5).is_err());
    }

    /// Brute-force 8-connected components over grid coordinates.
    fn components_8(cells: &[(i32, i32)]) -> usize {
        let mut seen = vec![false; cells.len()];
        let mut count = 0;
        for s in 0..cells.len() {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(k) = stack.pop() {
                for (m, c) in cells.iter().enumerate() {
                    if !seen[m] && (c.0 - cells[k].0).abs() <= 1 && (c.1 - cells[k].1).abs() <= 1 {
                        seen[m] = true;
                        stack.push(m);
                    }
                }
            }
        }
        count
    }

    #[test]
    fn adjacency_examples() {
        let plan = single_tile_plan(0, 0, 336, 192);
        let t = TileIndex::new(0, 0);
        let cells = [(2, 2), (2, 3), (5, 5)];
        let boxes = pseudo_boxes(&grid_with(&cells), &plan, t, 0.5).unwrap();
        let fused = adjacency_fuse(&boxes);
        let oracle = components_8(&cells.map(|(r, c)| (r as i32, c as i32)));
        assert_eq!(oracle, 2);
        assert_eq!(fused.len(), oracle);

        let single = pseudo_boxes(&grid_with(&[(7, 9)]), &plan, t, 0.5).unwrap();
        assert_eq!(adjacency_fuse(&single), single);

        let row: Vec<(usize, usize)> = (0..24).map(|c| (10, c)).collect();
        let boxes = pseudo_boxes(&grid_with(&row), &plan, t, 0.5).unwrap();
        let fused = adjacency_fuse(&boxes);
        assert_eq!(fused.len(), 1);
        assert_eq!(fused[0].bbox.x_min(), 0.0);
        assert_eq!(fused[0].bbox.x_max(), 336.0);

        // Diagonal neighbors count under 8-connectivity.
        let diag = pseudo_boxes(&grid_with(&[(1, 1), (2, 2)]), &plan, t, 0.5).unwrap();
        assert_eq!(adjacency_fuse(&diag).len(), 1);
    }

    #[test]
    fn adjacency_matches_bruteforce_on_random_grids() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let plan = single_tile_plan(40, 80, 300, 192);
        for _ in 0..50 {
            let cells: Vec<(usize, usize)> = (0..24 * 24)
                .filter(|_| rng.random::<f64>() < 0.15)
                .map(|k| (k / 24, k % 24))
                .collect();
            let boxes = pseudo_boxes(&grid_with(&cells), &plan, TileIndex::new(0, 0), 0.5).unwrap();
            let oracle = components_8(&cells.iter().map(|&(r, c)| (r as i32, c as i32)).collect::<Vec<_>>());
            assert_eq!(adjacency_fuse(&boxes).len(), oracle);
        }
    }

    #[test]
    fn match_pair_examples() {
        let a = det([0.0, 0.0, 50.0, 60.0], 0.9);
        let b = det([0.0, 0.0, 120.0, 60.0], 0.8);
        let iou50 = FusionConfig::new(MatchStrategy::Iou, 0.5).unwrap();
        let ratio80 = FusionConfig::new(MatchStrategy::OneWayRatio, 0.8).unwrap();
        assert!(match_pairs(&[a, b], &iou50).is_empty());
        assert_eq!(match_pairs(&[a, b], &ratio80), vec![(0, 1)]);

        for thr in [0.1, 0.5, 1.0] {
            for s in [MatchStrategy::Iou, MatchStrategy::OneWayRatio] {
                let cfg = FusionConfig::new(s, thr).unwrap();
                assert_eq!(match_pairs(&[a, a], &cfg), vec![(0, 1)]);
            }
        }

        let far = det([500.0, 500.0, 520.0, 520.0], 0.9);
        assert!(match_pairs(&[a, far], &iou50).is_empty());
        assert!(match_pairs(&[a, far], &ratio80).is_empty());
    }

    #[test]
    fn classes_never_match() {
        let a = det([0.0, 0.0, 10.0, 10.0], 0.9);
        let mut b = a;
        b.class_id = 2;
        assert!(match_pairs(&[a, b], &FusionConfig::default()).is_empty());
        assert_eq!(fuse(&[a, b], &FusionConfig::default()).unwrap().len(), 2);
    }

    #[test]
    fn cluster_examples() {
        let c = cluster(4, &[(0, 1), (1, 2)]);
        assert_eq!(
            c,
            vec![
                Cluster { members: vec![0, 1, 2] },
                Cluster { members: vec![3] }
            ]
        );
        assert_eq!(cluster(3, &[]).len(), 3);
        let all: Vec<(usize, usize)> = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).collect();
        assert_eq!(cluster(5, &all).len(), 1);
    }

    #[test]
    fn reduce_examples() {
        let a = det([0.0, 0.0, 50.0, 60.0], 0.95);
        let b = det([0.0, 0.0, 120.0, 60.0], 0.7);
        assert_eq!(reduce(&[a], ReducePolicy::LargestBox).unwrap(), a);

        let r = reduce(&[a, b], ReducePolicy::LargestBox).unwrap();
        assert_eq!(r.bbox.area(), 7200.0);
        assert_eq!(r.confidence, 0.95);

        let r = reduce(&[b, a], ReducePolicy::MaxConfidence).unwrap();
        assert_eq!(r.bbox, a.bbox);

        // Equal areas: lower y_min wins, then lower x_min.
        let p = det([10.0, 5.0, 20.0, 15.0], 0.5);
        let q = det([0.0, 6.0, 10.0, 16.0], 0.5);
        let r1 = reduce(&[p, q], ReducePolicy::LargestBox).unwrap();
        let r2 = reduce(&[q, p], ReducePolicy::LargestBox).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.bbox, p.bbox);

        assert!(reduce(&[], ReducePolicy::LargestBox).is_err());
    }

    #[test]
    fn fuse_examples() {
        let free = vec![
            det([0.0, 0.0, 10.0, 10.0], 0.9),
            det([20.0, 0.0, 30.0, 10.0], 0.8),
            det([0.0, 20.0, 10.0, 30.0], 0.7),
        ];
        let cfg = FusionConfig::default();
        let mut expect = free.clone();
        expect.sort_by(Detection::canonical_cmp);
        assert_eq!(fuse(&free, &cfg).unwrap(), expect);

        let copies = vec![det([5.0, 5.0, 15.0, 15.0], 0.6); 5];
        assert_eq!(fuse(&copies, &cfg).unwrap().len(), 1);

        let a = det([0.0, 0.0, 50.0, 60.0], 0.9);
        let b = det([0.0, 0.0, 120.0, 60.0], 0.8);
        let r = fuse(&[a, b], &FusionConfig::new(MatchStrategy::OneWayRatio, 0.8).unwrap()).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].bbox, b.bbox);
        let r = fuse(&[a, b], &FusionConfig::new(MatchStrategy::Iou, 0.5).unwrap()).unwrap();
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn bad_threshold_rejected() {
        assert!(FusionConfig::new(MatchStrategy::Iou, 0.0).is_err());
        assert!(FusionConfig::new(MatchStrategy::Iou, 1.5).is_err());
    }

    #[test]
    fn to_global_maps_each_tile() {
        let plan = plan_tiles("g", ImageDims::new(800, 400).unwrap(), 400, 100.0, 200).unwrap();
        let mut per_tile = BTreeMap::new();
        per_tile.insert(TileIndex::new(1, 0), vec![det([0.0, 0.0, 10.0, 10.0], 1.0)]);
        let g = to_global(&plan, &per_tile).unwrap();
        assert_eq!(g[0].bbox, BBox::new(200.0, 0.0, 220.0, 20.0).unwrap());
        assert_eq!(g[0].source_tile, Some(TileIndex::new(1, 0)));
    }
}
