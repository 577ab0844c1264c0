//! Geometric primitives: axis-aligned boxes, image dimensions and normalized
//! bounding-box areas, plus the two overlap measures used for fusion.
//!
//! Coordinates are continuous pixels in the image frame (origin top-left,
//! x right, y down). Areas are plain `(max - min)` products with no `+1`
//! pixel convention.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned box. Zero-area boxes are allowed, inverted ones are not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinate in ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        if x_min > x_max || y_min > y_max {
            return Err(Error::InvalidBox(format!(
                "negative extent in ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from two arbitrary corners, swapping coordinates as needed.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        BBox::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2))
    }

    /// Degenerate box at a single point.
    pub fn point(x: f64, y: f64) -> Result<Self> {
        BBox::new(x, y, x, y)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Closed containment test for a point.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min
            && other.y_min >= self.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }

    /// Intersection rectangle, or `None` when the boxes are separated.
    ///
    /// Boxes that only touch along an edge yield a zero-area box.
    pub fn clip(&self, r: &BBox) -> Option<BBox> {
        let x_min = self.x_min.max(r.x_min);
        let y_min = self.y_min.max(r.y_min);
        let x_max = self.x_max.min(r.x_max);
        let y_max = self.y_max.min(r.y_max);
        if x_min > x_max || y_min > y_max {
            return None;
        }
        Some(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Smallest box containing both.
    pub fn union_box(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    /// Applies `p -> p * scale + offset` on both axes.
    pub fn affine(&self, scale: f64, offset_x: f64, offset_y: f64) -> Result<BBox> {
        BBox::new(
            self.x_min * scale + offset_x,
            self.y_min * scale + offset_y,
            self.x_max * scale + offset_x,
            self.y_max * scale + offset_y,
        )
    }

    /// Canonical ordering: `(y_min, x_min, y_max, x_max)` using total order.
    pub fn canonical_cmp(&self, other: &BBox) -> Ordering {
        self.y_min
            .total_cmp(&other.y_min)
            .then(self.x_min.total_cmp(&other.x_min))
            .then(self.y_max.total_cmp(&other.y_max))
            .then(self.x_max.total_cmp(&other.x_max))
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Fraction of `a`'s own area covered by `b`. Directional: `a` owns the
/// denominator, so a box fully enclosed by a larger one scores 1.
pub fn intersection_ratio(a: &BBox, b: &BBox) -> Result<f64> {
    let own = a.area();
    if own <= 0.0 {
        return Err(Error::ZeroArea);
    }
    Ok((a.intersection_area(b) / own).min(1.0))
}

pub fn clip(b: &BBox, r: &BBox) -> Option<BBox> {
    b.clip(r)
}

/// Image size in whole pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawDims")]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
struct RawDims {
    width: u32,
    height: u32,
}

impl TryFrom<RawDims> for ImageDims {
    type Error = Error;

    fn try_from(r: RawDims) -> Result<Self> {
        ImageDims::new(r.width, r.height)
    }
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(ImageDims { width, height })
    }

    pub fn area(&self) -> f64 {
        f64::from(self.width) * f64::from(self.height)
    }

    pub fn min_side(&self) -> u32 {
        self.width.min(self.height)
    }

    pub fn rect(&self) -> BBox {
        BBox {
            x_min: 0.0,
            y_min: 0.0,
            x_max: f64::from(self.width),
            y_max: f64::from(self.height),
        }
    }
}

/// Normalized bounding-box area: box area over image area, in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Nba(f64);

impl Nba {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::InvalidValue(format!(
                "normalized area must lie in (0, 1], got {value}"
            )));
        }
        Ok(Nba(value))
    }

    pub fn from_percent(percent: f64) -> Result<Self> {
        Nba::new(percent / 100.0)
    }

    /// Parses either a fraction (`0.008`) or a percentage (`0.8%`).
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidValue(format!("cannot parse normalized area `{s}`"));
        match s.strip_suffix('%') {
            Some(p) => Nba::from_percent(p.trim().parse().map_err(|_| bad())?),
            None => Nba::new(s.parse().map_err(|_| bad())?),
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn percent(self) -> f64 {
        self.0 * 100.0
    }
}

impl TryFrom<f64> for Nba {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Nba::new(v)
    }
}

impl From<Nba> for f64 {
    fn from(n: Nba) -> f64 {
        n.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn area_examples() {
        assert_eq!(area(&b(0.0, 0.0, 10.0, 10.0)), 100.0);
        assert_eq!(area(&b(5.0, 5.0, 5.0, 9.0)), 0.0);
        assert_eq!(area(&b(0.0, 0.0, 57.0, 39.0)), 2223.0);
    }

    #[test]
    fn rejects_inverted_and_non_finite() {
        assert!(BBox::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 1.0, 1.0, 0.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
        assert_eq!(
            BBox::from_corners(10.0, 10.0, 5.0, 5.0).unwrap(),
            b(5.0, 5.0, 10.0, 10.0)
        );
    }

    #[test]
    fn iou_examples() {
        let a = b(3.0, 4.0, 20.0, 11.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(5.0, 5.0, 6.0, 6.0)), 0.0);
        let v = iou(&b(0.0, 0.0, 50.0, 60.0), &b(0.0, 0.0, 120.0, 60.0));
        assert!((v - 3000.0 / 7200.0).abs() < 1e-15);
        assert!((v - 0.41667).abs() < 1e-5);
    }

    #[test]
    fn iou_of_zero_area_boxes_is_zero() {
        let p = BBox::point(3.0, 3.0).unwrap();
        assert_eq!(iou(&p, &p), 0.0);
        assert_eq!(iou(&p, &BBox::point(9.0, 9.0).unwrap()), 0.0);
    }

    #[test]
    fn intersection_ratio_examples() {
        let a = b(0.0, 0.0, 50.0, 60.0);
        let big = b(0.0, 0.0, 120.0, 60.0);
        assert_eq!(intersection_ratio(&a, &big).unwrap(), 1.0);
        assert!((intersection_ratio(&big, &a).unwrap() - 3000.0 / 7200.0).abs() < 1e-15);
        assert_eq!(
            intersection_ratio(&b(0.0, 0.0, 1.0, 1.0), &b(5.0, 5.0, 6.0, 6.0)).unwrap(),
            0.0
        );
        assert_eq!(
            intersection_ratio(&b(0.0, 0.0, 10.0, 10.0), &b(5.0, 0.0, 15.0, 10.0)).unwrap(),
            0.5
        );
        assert!(matches!(
            intersection_ratio(&b(1.0, 1.0, 1.0, 5.0), &big),
            Err(Error::ZeroArea)
        ));
    }

    #[test]
    fn clip_examples() {
        let r = b(0.0, 0.0, 100.0, 100.0);
        let inside = b(10.0, 20.0, 30.0, 40.0);
        assert_eq!(clip(&inside, &r), Some(inside));
        assert_eq!(
            clip(&b(90.0, 0.0, 110.0, 10.0), &r),
            Some(b(90.0, 0.0, 100.0, 10.0))
        );
        assert_eq!(clip(&b(200.0, 200.0, 210.0, 210.0), &r), None);
    }

    #[test]
    fn nba_parsing() {
        assert!((Nba::parse("0.8%").unwrap().value() - 0.008).abs() < 1e-15);
        assert_eq!(Nba::parse("0.008").unwrap().value(), 0.008);
        assert!(Nba::parse("0").is_err());
        assert!(Nba::parse("150%").is_err());
        assert!(Nba::parse("abc").is_err());
    }

    #[test]
    fn bbox_json_is_a_four_array() {
        let s = serde_json::to_string(&b(1.0, 2.5, 3.0, 4.0)).unwrap();
        assert_eq!(s, "[1.0,2.5,3.0,4.0]");
        assert!(serde_json::from_str::<BBox>("[3.0,0.0,1.0,1.0]").is_err());
    }
}
