//! Binary PPM (P6, maxval 255) reading/writing and tile crops resampled to the
//! network input resolution.
//!
//! Resampling is bilinear with pixel centers at half-integer coordinates:
//! output pixel `u` samples source position `x + (u + 0.5) * s - 0.5`, clamped
//! to the tile, where `s = tile_size / input_resolution`. Channels are rounded
//! half up.

use std::fs;
use std::path::Path;

use crate::tiling::{Tile, TilePlan};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let bad = |msg: &str| Error::InvalidValue(format!("PPM: {msg}"));
    let mut pos = 0;
    let mut next_token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if next_token()? != "P6" {
        return Err(bad("only binary P6 is supported"));
    }
    let mut num = || -> Result<u32> {
        next_token()?
            .parse::<u32>()
            .map_err(|_| bad("non-numeric header field"))
    };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero dimension"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let len = width as usize * height as usize * 3;
    let data = bytes
        .get(pos..pos + len)
        .ok_or_else(|| bad("raster shorter than header declares"))?
        .to_vec();
    Ok(RgbImage {
        width,
        height,
        data,
    })
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

/// Crops one tile and resamples it to `input_resolution` squared.
pub fn crop_tile(img: &RgbImage, tile: &Tile, tile_size: u32, input_resolution: u32) -> Result<RgbImage> {
    if tile.x + tile_size > img.width || tile.y + tile_size > img.height {
        return Err(Error::InvalidValue(format!(
            "tile ({}, {}) exceeds {}x{} image",
            tile.index.col, tile.index.row, img.width, img.height
        )));
    }
    let n = input_resolution;
    let s = f64::from(tile_size) / f64::from(n);
    let hi = f64::from(tile_size - 1);
    // Per-axis sample positions are shared by every row/column.
    let taps: Vec<(u32, u32, f64)> = (0..n)
        .map(|u| {
            let p = ((f64::from(u) + 0.5) * s - 0.5).clamp(0.0, hi);
            let i0 = p.floor();
            let i1 = (i0 + 1.0).min(hi);
            (i0 as u32, i1 as u32, p - i0)
        })
        .collect();
    let mut out = RgbImage::new(n, n);
    for (v, &(y0, y1, fy)) in taps.iter().enumerate() {
        for (u, &(x0, x1, fx)) in taps.iter().enumerate() {
            let p00 = img.pixel(tile.x + x0, tile.y + y0);
            let p10 = img.pixel(tile.x + x1, tile.y + y0);
            let p01 = img.pixel(tile.x + x0, tile.y + y1);
            let p11 = img.pixel(tile.x + x1, tile.y + y1);
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
                let bot = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
                let val = top * (1.0 - fy) + bot * fy;
                rgb[c] = (val + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(u as u32, v as u32, rgb);
        }
    }
    Ok(out)
}

/// Canonical crop file name.
pub fn crop_file_name(image_id: &str, tile: &Tile) -> String {
    format!("{image_id}_{}_{}.ppm", tile.index.col, tile.index.row)
}

/// Writes every tile of `plan` as a PPM under `out_dir`; returns the paths.
pub fn write_crops(img: &RgbImage, plan: &TilePlan, out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if img.width != plan.dims.width || img.height != plan.dims.height {
        return Err(Error::Shape(format!(
            "image is {}x{} but plan `{}` expects {}x{}",
            img.width, img.height, plan.image_id, plan.dims.width, plan.dims.height
        )));
    }
    let crops = plan
        .tiles
        .iter()
        .map(|t| crop_tile(img, t, plan.tile_size, plan.input_resolution).map(|c| (t, c)))
        .collect::<Result<Vec<_>>>()?;
    let mut paths = Vec::with_capacity(crops.len());
    for (t, c) in crops {
        let p = out_dir.join(crop_file_name(&plan.image_id, t));
        write_ppm(&p, &c)?;
        paths.push(p);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ImageDims;
    use crate::tiling::plan_tiles;

    fn gradient(w: u32, h: u32) -> RgbImage {
        let mut img = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(x, y, [(x % 256) as u8, (y % 256) as u8, 7]);
            }
        }
        img
    }

    #[test]
    fn ppm_roundtrip_with_comment() {
        let img = gradient(5, 3);
        let bytes = encode_ppm(&img);
        assert!(bytes.starts_with(b"P6\n5 3\n255\n"));
        assert_eq!(decode_ppm(&bytes).unwrap(), img);
        let mut commented = b"P6\n# made by hand\n5 3\n255\n".to_vec();
        commented.extend_from_slice(&img.data);
        assert_eq!(decode_ppm(&commented).unwrap(), img);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(decode_ppm(b"P3\n1 1\n255\n000").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n000000").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n012").is_err());
    }

    #[test]
    fn identity_scale_copies_pixels() {
        let img = gradient(64, 64);
        let plan = plan_tiles("g", ImageDims::new(64, 64).unwrap(), 32, 4.0, 32).unwrap();
        let t = &plan.tiles[3];
        let c = crop_tile(&img, t, 32, 32).unwrap();
        for v in 0..32 {
            for u in 0..32 {
                assert_eq!(c.pixel(u, v), img.pixel(t.x + u, t.y + v));
            }
        }
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        // Horizontal ramp 0, 10, 20, ...: each output pixel averages two neighbors.
        let mut img = RgbImage::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                img.set_pixel(x, y, [(x * 10) as u8, 0, 0]);
            }
        }
        let plan = plan_tiles("r", ImageDims::new(8, 8).unwrap(), 8, 1.0, 4).unwrap();
        let c = crop_tile(&img, &plan.tiles[0], 8, 4).unwrap();
        let row: Vec<u8> = (0..4).map(|u| c.pixel(u, 0)[0]).collect();
        assert_eq!(row, vec![5, 25, 45, 65]);
    }

    #[test]
    fn crops_are_named_and_written() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient(100, 60);
        let plan = plan_tiles("cam", ImageDims::new(100, 60).unwrap(), 60, 5.0, 30).unwrap();
        let paths = write_crops(&img, &plan, dir.path()).unwrap();
        assert_eq!(paths.len(), plan.tile_count());
        assert!(paths[0].ends_with("cam_0_0.ppm"));
        let back = read_ppm(&paths[1]).unwrap();
        assert_eq!((back.width, back.height), (30, 30));
    }
}
