//! Adaptive tile sizing and overlapping grid planning.
//!
//! A square tile side is chosen so that the average object, once the tile is
//! resampled to the network input, covers a target fraction of the input:
//!
//! ```text
//! tile_side = sqrt(image_area * image_nba / target_nba)
//! ```
//!
//! The number of tiles along each axis is then the smallest count whose evenly
//! spaced placement overlaps adjacent tiles by at least 1.5 times the mean
//! object extent, so an object cut by one tile border is whole in a neighbor.

use serde::{Deserialize, Serialize};

use crate::dataset::ImageAnnotations;
use crate::geom::{BBox, ImageDims, Nba};
use crate::{Error, Result};

/// Factor applied to the mean object extent to get the minimum tile overlap.
pub const OVERLAP_FACTOR: f64 = 1.5;

/// Default cap on tiles per image before a plan is rejected.
pub const DEFAULT_MAX_TILES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct TileIndex {
    pub col: u32,
    pub row: u32,
}

impl TileIndex {
    pub fn new(col: u32, row: u32) -> Self {
        TileIndex { col, row }
    }

    /// Row-major ordering key.
    pub fn row_major(&self) -> (u32, u32) {
        (self.row, self.col)
    }
}

impl From<[u32; 2]> for TileIndex {
    fn from(v: [u32; 2]) -> Self {
        TileIndex::new(v[0], v[1])
    }
}

impl From<TileIndex> for [u32; 2] {
    fn from(t: TileIndex) -> Self {
        [t.col, t.row]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tile {
    pub index: TileIndex,
    /// Integer pixel offset of the top-left corner.
    pub x: u32,
    pub y: u32,
    pub rect: BBox,
}

/// The per-image tiling contract: where each tile sits and how its pixels map
/// to network input coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePlan {
    pub image_id: String,
    pub dims: ImageDims,
    pub tile_size: u32,
    pub grid: (u32, u32),
    /// Row-major.
    pub tiles: Vec<Tile>,
    pub input_resolution: u32,
    pub min_overlap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectStats {
    pub mean_nba: Nba,
    /// Square root of the mean object box area, in pixels.
    pub mean_extent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanOptions {
    pub max_tiles: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            max_tiles: DEFAULT_MAX_TILES,
        }
    }
}

/// Mean normalized area and mean extent over the positive-area boxes of one image.
pub fn object_stats(annotations: &ImageAnnotations) -> Result<ObjectStats> {
    stats_from_areas(
        annotations.boxes.iter().map(|a| a.bbox.area()),
        annotations.dims,
    )
}

/// Dataset-level statistics: per-object averages pooled across all images.
pub fn dataset_object_stats(images: &[ImageAnnotations]) -> Result<ObjectStats> {
    let mut nba_sum = 0.0;
    let mut area_sum = 0.0;
    let mut n = 0usize;
    for img in images {
        let image_area = img.dims.area();
        for a in img.boxes.iter().map(|a| a.bbox.area()).filter(|&a| a > 0.0) {
            nba_sum += a / image_area;
            area_sum += a;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoObjects);
    }
    Ok(ObjectStats {
        mean_nba: Nba::new(nba_sum / n as f64)?,
        mean_extent: (area_sum / n as f64).sqrt(),
    })
}

fn stats_from_areas(areas: impl Iterator<Item = f64>, dims: ImageDims) -> Result<ObjectStats> {
    let (sum, n) = areas
        .filter(|&a| a > 0.0)
        .fold((0.0, 0usize), |(s, n), a| (s + a, n + 1));
    if n == 0 {
        return Err(Error::NoObjects);
    }
    let mean_area = sum / n as f64;
    Ok(ObjectStats {
        mean_nba: Nba::new(mean_area / dims.area())?,
        mean_extent: mean_area.sqrt(),
    })
}

/// Unclamped, unrounded tile side.
pub fn raw_tile_size(dims: ImageDims, image_nba: Nba, target_nba: Nba) -> f64 {
    (dims.area() * image_nba.value() / target_nba.value()).sqrt()
}

/// Tile side in whole pixels, clamped to `[input_resolution, min(width, height)]`.
///
/// When the image is smaller than the network input the upper clamp wins and
/// the tile is the short image side.
pub fn compute_tile_size(
    dims: ImageDims,
    image_nba: Nba,
    target_nba: Nba,
    input_resolution: u32,
) -> u32 {
    let raw = raw_tile_size(dims, image_nba, target_nba);
    let clamped = raw
        .max(f64::from(input_resolution))
        .min(f64::from(dims.min_side()));
    round_half_up(clamped) as u32
}

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Number of tiles along one axis of length `len`.
fn tiles_along(len: u32, tile: u32, min_overlap: f64, cap: usize) -> Result<u32> {
    if tile >= len {
        return Ok(1);
    }
    let (len_f, tile_f) = (f64::from(len), f64::from(tile));
    let mut n = len.div_ceil(tile).max(2);
    loop {
        if n as usize > cap {
            return Err(Error::DegenerateOverlap(format!(
                "axis of {len} px with {tile} px tiles needs more than {cap} tiles for {min_overlap:.2} px overlap"
            )));
        }
        let overlap = (f64::from(n) * tile_f - len_f) / f64::from(n - 1);
        if overlap >= min_overlap {
            return Ok(n);
        }
        n += 1;
    }
}

/// Evenly spaced integer offsets; round half up, last offset is `len - tile`.
fn axis_offsets(len: u32, tile: u32, n: u32) -> Vec<u32> {
    if n == 1 {
        return vec![0];
    }
    let span = u64::from(len - tile);
    let steps = u64::from(n - 1);
    (0..u64::from(n))
        .map(|i| ((2 * i * span + steps) / (2 * steps)) as u32)
        .collect()
}

pub fn plan_tiles(
    image_id: &str,
    dims: ImageDims,
    tile_size: u32,
    mean_extent: f64,
    input_resolution: u32,
) -> Result<TilePlan> {
    plan_tiles_with(
        image_id,
        dims,
        tile_size,
        mean_extent,
        input_resolution,
        PlanOptions::default(),
    )
}

pub fn plan_tiles_with(
    image_id: &str,
    dims: ImageDims,
    tile_size: u32,
    mean_extent: f64,
    input_resolution: u32,
    opts: PlanOptions,
) -> Result<TilePlan> {
    if input_resolution == 0 {
        return Err(Error::InvalidValue("input resolution must be positive".into()));
    }
    if tile_size == 0 || tile_size > dims.min_side() {
        return Err(Error::InvalidValue(format!(
            "tile size {tile_size} outside [1, {}]",
            dims.min_side()
        )));
    }
    if tile_size < input_resolution && tile_size != dims.min_side() {
        return Err(Error::InvalidValue(format!(
            "tile size {tile_size} below input resolution {input_resolution}"
        )));
    }
    if !(mean_extent.is_finite() && mean_extent >= 0.0) {
        return Err(Error::InvalidValue(format!(
            "mean object extent must be finite and non-negative, got {mean_extent}"
        )));
    }
    let min_overlap = OVERLAP_FACTOR * mean_extent;
    let n_x = tiles_along(dims.width, tile_size, min_overlap, opts.max_tiles)?;
    let n_y = tiles_along(dims.height, tile_size, min_overlap, opts.max_tiles)?;
    let total = n_x as usize * n_y as usize;
    if total > opts.max_tiles {
        return Err(Error::DegenerateOverlap(format!(
            "{n_x}x{n_y} = {total} tiles exceeds the cap of {}",
            opts.max_tiles
        )));
    }
    let xs = axis_offsets(dims.width, tile_size, n_x);
    let ys = axis_offsets(dims.height, tile_size, n_y);
    let side = f64::from(tile_size);
    let mut tiles = Vec::with_capacity(total);
    for (row, &y) in ys.iter().enumerate() {
        for (col, &x) in xs.iter().enumerate() {
            let (xf, yf) = (f64::from(x), f64::from(y));
            tiles.push(Tile {
                index: TileIndex::new(col as u32, row as u32),
                x,
                y,
                rect: BBox::new(xf, yf, xf + side, yf + side)?,
            });
        }
    }
    Ok(TilePlan {
        image_id: image_id.to_string(),
        dims,
        tile_size,
        grid: (n_x, n_y),
        tiles,
        input_resolution,
        min_overlap,
    })
}

/// Which statistics drive the tile size of an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatsSource {
    /// Per-image statistics, falling back to the dataset mean for images
    /// without usable boxes.
    PerImage,
    /// Dataset-wide statistics for every image.
    Dataset,
    /// Externally supplied estimate (e.g. from flight altitude).
    Override(ObjectStats),
}

/// Plans every image of a dataset with a shared target NBA.
pub fn plan_dataset(
    images: &[ImageAnnotations],
    target_nba: Nba,
    input_resolution: u32,
    source: StatsSource,
    opts: PlanOptions,
) -> Result<Vec<TilePlan>> {
    let fallback = match source {
        StatsSource::Override(s) => Some(s),
        _ => dataset_object_stats(images).ok(),
    };
    images
        .iter()
        .map(|img| {
            let stats = match source {
                StatsSource::PerImage => match object_stats(img) {
                    Ok(s) => s,
                    Err(Error::NoObjects) => fallback.ok_or(Error::NoObjects)?,
                    Err(e) => return Err(e),
                },
                StatsSource::Dataset | StatsSource::Override(_) => {
                    fallback.ok_or(Error::NoObjects)?
                }
            };
            plan_image(img, stats, target_nba, input_resolution, opts)
        })
        .collect()
}

pub fn plan_image(
    img: &ImageAnnotations,
    stats: ObjectStats,
    target_nba: Nba,
    input_resolution: u32,
    opts: PlanOptions,
) -> Result<TilePlan> {
    let tile = compute_tile_size(img.dims, stats.mean_nba, target_nba, input_resolution);
    plan_tiles_with(
        &img.image_id,
        img.dims,
        tile,
        stats.mean_extent,
        input_resolution,
        opts,
    )
}

impl TilePlan {
    pub fn tile(&self, index: TileIndex) -> Result<&Tile> {
        let (n_x, n_y) = self.grid;
        if index.col >= n_x || index.row >= n_y {
            return Err(Error::UnknownTile {
                image_id: self.image_id.clone(),
                col: index.col,
                row: index.row,
            });
        }
        Ok(&self.tiles[(index.row * n_x + index.col) as usize])
    }

    /// Source pixels per network input pixel.
    pub fn scale(&self) -> f64 {
        f64::from(self.tile_size) / f64::from(self.input_resolution)
    }

    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    /// Maps a box from network input coordinates of a tile to image coordinates.
    pub fn tile_to_global(&self, index: TileIndex, b: &BBox) -> Result<BBox> {
        let tile = self.tile(index)?;
        b.affine(self.scale(), f64::from(tile.x), f64::from(tile.y))
    }

    /// Inverse of [`TilePlan::tile_to_global`]. Pure affine: callers clip first.
    pub fn global_to_tile(&self, index: TileIndex, b: &BBox) -> Result<BBox> {
        let tile = self.tile(index)?;
        let inv = 1.0 / self.scale();
        b.affine(inv, -f64::from(tile.x) * inv, -f64::from(tile.y) * inv)
    }

    /// Network input rectangle `[0, input_resolution]^2`.
    pub fn input_rect(&self) -> BBox {
        let r = f64::from(self.input_resolution);
        BBox::new(0.0, 0.0, r, r).expect("positive input resolution")
    }

    pub fn to_manifest(&self) -> TileManifest {
        TileManifest {
            image_id: self.image_id.clone(),
            width: self.dims.width,
            height: self.dims.height,
            tile_size: self.tile_size,
            input_resolution: self.input_resolution,
            grid: [self.grid.0, self.grid.1],
            tiles: self
                .tiles
                .iter()
                .map(|t| ManifestTile {
                    col: t.index.col,
                    row: t.index.row,
                    x: t.x,
                    y: t.y,
                })
                .collect(),
            min_overlap: self.min_overlap,
        }
    }
}

pub fn tile_to_global(plan: &TilePlan, index: TileIndex, b: &BBox) -> Result<BBox> {
    plan.tile_to_global(index, b)
}

pub fn global_to_tile(plan: &TilePlan, index: TileIndex, b: &BBox) -> Result<BBox> {
    plan.global_to_tile(index, b)
}

/// Serialized form of a [`TilePlan`]. Field order is part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileManifest {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub input_resolution: u32,
    pub grid: [u32; 2],
    pub tiles: Vec<ManifestTile>,
    #[serde(default)]
    pub min_overlap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestTile {
    pub col: u32,
    pub row: u32,
    pub x: u32,
    pub y: u32,
}

impl TryFrom<TileManifest> for TilePlan {
    type Error = Error;

    fn try_from(m: TileManifest) -> Result<Self> {
        let dims = ImageDims::new(m.width, m.height)?;
        let [n_x, n_y] = m.grid;
        if n_x == 0 || n_y == 0 || m.tiles.len() != n_x as usize * n_y as usize {
            return Err(Error::InvalidValue(format!(
                "manifest for `{}`: grid {n_x}x{n_y} does not match {} tiles",
                m.image_id,
                m.tiles.len()
            )));
        }
        if m.tile_size == 0 || m.input_resolution == 0 {
            return Err(Error::InvalidValue(format!(
                "manifest for `{}`: tile size and input resolution must be positive",
                m.image_id
            )));
        }
        let side = f64::from(m.tile_size);
        let mut tiles = Vec::with_capacity(m.tiles.len());
        for (k, t) in m.tiles.iter().enumerate() {
            let expect = TileIndex::new(k as u32 % n_x, k as u32 / n_x);
            if TileIndex::new(t.col, t.row) != expect {
                return Err(Error::InvalidValue(format!(
                    "manifest for `{}`: tiles not in row-major order at position {k}",
                    m.image_id
                )));
            }
            if t.x + m.tile_size > m.width || t.y + m.tile_size > m.height {
                return Err(Error::InvalidValue(format!(
                    "manifest for `{}`: tile ({}, {}) exceeds image bounds",
                    m.image_id, t.col, t.row
                )));
            }
            let (x, y) = (f64::from(t.x), f64::from(t.y));
            tiles.push(Tile {
                index: expect,
                x: t.x,
                y: t.y,
                rect: BBox::new(x, y, x + side, y + side)?,
            });
        }
        Ok(TilePlan {
            image_id: m.image_id,
            dims,
            tile_size: m.tile_size,
            grid: (n_x, n_y),
            tiles,
            input_resolution: m.input_resolution,
            min_overlap: m.min_overlap,
        })
    }
}
