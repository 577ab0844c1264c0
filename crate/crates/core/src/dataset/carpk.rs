//! CARPK devkit layout:
//!
//! ```text
//! <root>/ImageSets/<split>.txt     one image id per line
//! <root>/Annotations/<id>.txt      one object per line: x1 y1 x2 y2 [class]
//! ```
//!
//! Fields may be separated by whitespace or commas; the class column defaults
//! to 1. Image sizes come from a sidecar index (`<id> <width> <height>` per
//! line) or a fixed value, since CARPK frames are all 1280x720.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{Annotation, ImageAnnotations};
use crate::geom::{BBox, ImageDims};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    /// Accept boxes given as (x2, y2, x1, y1) by swapping corners.
    pub swap_corners: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { swap_corners: true }
    }
}

pub fn parse_annotation_file(text: &str, opts: ParseOptions) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 && fields.len() != 5 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 4 or 5 fields, found {}", fields.len()),
            });
        }
        let mut v = [0.0f64; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("non-numeric field `{f}`"),
                })?;
        }
        let class_id = match fields.get(4) {
            None => 1,
            Some(f) => parse_class(f).ok_or_else(|| Error::Parse {
                line,
                msg: format!("invalid class `{f}`"),
            })?,
        };
        let [x1, y1, x2, y2] = v;
        let bbox = if opts.swap_corners {
            BBox::from_corners(x1, y1, x2, y2)
        } else {
            BBox::new(x1, y1, x2, y2)
        }
        .map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        out.push(Annotation { class_id, bbox });
    }
    Ok(out)
}

fn parse_class(f: &str) -> Option<u32> {
    if let Ok(c) = f.parse::<u32>() {
        return Some(c);
    }
    // Some exports write the class as a float.
    let x = f.parse::<f64>().ok()?;
    (x >= 0.0 && x.fract() == 0.0 && x <= f64::from(u32::MAX)).then_some(x as u32)
}

/// Writes annotations in the devkit grammar, one object per line.
pub fn serialize_annotations(boxes: &[Annotation]) -> String {
    let mut s = String::new();
    for a in boxes {
        let [x1, y1, x2, y2] = a.bbox.to_array();
        let _ = writeln!(s, "{x1} {y1} {x2} {y2} {}", a.class_id);
    }
    s
}

type DimsLookup<'a> = Box<dyn Fn(&str) -> Result<ImageDims> + 'a>;

#[derive(Debug, Clone, PartialEq)]
pub enum DimsSource {
    Fixed(ImageDims),
    /// Text file with `<id> <width> <height>` per line.
    Index(PathBuf),
}

impl DimsSource {
    fn resolve(&self) -> Result<DimsLookup<'_>> {
        match self {
            DimsSource::Fixed(d) => {
                let d = *d;
                Ok(Box::new(move |_| Ok(d)))
            }
            DimsSource::Index(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let mut map = HashMap::new();
                for (i, raw) in text.lines().enumerate() {
                    let f: Vec<&str> = raw.split_whitespace().collect();
                    if f.is_empty() {
                        continue;
                    }
                    let bad = || Error::Parse {
                        line: i + 1,
                        msg: format!("expected `<id> <width> <height>` in {}", path.display()),
                    };
                    if f.len() != 3 {
                        return Err(bad());
                    }
                    let w = f[1].parse().map_err(|_| bad())?;
                    let h = f[2].parse().map_err(|_| bad())?;
                    map.insert(f[0].to_string(), ImageDims::new(w, h)?);
                }
                Ok(Box::new(move |id| {
                    map.get(id)
                        .copied()
                        .ok_or_else(|| Error::UnknownImage(id.to_string()))
                }))
            }
        }
    }
}

pub fn load_dataset(
    root: &Path,
    split: &str,
    dims: &DimsSource,
    opts: ParseOptions,
) -> Result<Vec<ImageAnnotations>> {
    let split_path = root.join("ImageSets").join(format!("{split}.txt"));
    let listing = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
    let dims_of = dims.resolve()?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for id in listing.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        let path = root.join("Annotations").join(format!("{id}.txt"));
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingAnnotation {
                    image_id: id.to_string(),
                    path,
                })
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        let boxes = parse_annotation_file(&text, opts).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })?;
        out.push(ImageAnnotations::clamped(id, dims_of(id)?, boxes));
    }
    Ok(out)
}
