//! Ground truth: the canonical in-memory/JSON representation, CARPK-style
//! annotation ingestion, synthetic parking-lot scenes and PPM tile crops.

mod carpk;
pub mod ppm;
mod synth;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::{BBox, ImageDims};
use crate::{Error, Result, FORMAT_VERSION};

pub use carpk::{load_dataset, parse_annotation_file, serialize_annotations, DimsSource, ParseOptions};
pub use synth::{synth_generate, Layout, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_id: u32,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Ground-truth boxes of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ImageRecord", into = "ImageRecord")]
pub struct ImageAnnotations {
    pub image_id: String,
    pub dims: ImageDims,
    pub boxes: Vec<Annotation>,
}

#[derive(Serialize, Deserialize)]
struct ImageRecord {
    image_id: String,
    width: u32,
    height: u32,
    boxes: Vec<Annotation>,
}

impl TryFrom<ImageRecord> for ImageAnnotations {
    type Error = Error;

    fn try_from(r: ImageRecord) -> Result<Self> {
        let dims = ImageDims::new(r.width, r.height)?;
        let bounds = dims.rect();
        if let Some(a) = r.boxes.iter().find(|a| !bounds.contains(&a.bbox)) {
            return Err(Error::InvalidBox(format!(
                "box {} outside image `{}` ({}x{})",
                a.bbox, r.image_id, r.width, r.height
            )));
        }
        Ok(ImageAnnotations {
            image_id: r.image_id,
            dims,
            boxes: r.boxes,
        })
    }
}

impl From<ImageAnnotations> for ImageRecord {
    fn from(a: ImageAnnotations) -> Self {
        ImageRecord {
            image_id: a.image_id,
            width: a.dims.width,
            height: a.dims.height,
            boxes: a.boxes,
        }
    }
}

impl ImageAnnotations {
    /// Builds a record, clamping boxes to the image and dropping those entirely outside.
    pub fn clamped(image_id: impl Into<String>, dims: ImageDims, boxes: Vec<Annotation>) -> Self {
        let bounds = dims.rect();
        let boxes = boxes
            .into_iter()
            .filter_map(|a| {
                a.bbox.clip(&bounds).map(|bbox| Annotation {
                    class_id: a.class_id,
                    bbox,
                })
            })
            .collect();
        ImageAnnotations {
            image_id: image_id.into(),
            dims,
            boxes,
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// On-disk canonical dataset document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub format: String,
    pub version: u32,
    /// Echo of the configuration that produced the dataset, if any.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
    pub images: Vec<ImageAnnotations>,
}

pub const DATASET_FORMAT: &str = "adaptile-dataset";

impl DatasetFile {
    pub fn new(images: Vec<ImageAnnotations>) -> Self {
        DatasetFile {
            format: DATASET_FORMAT.into(),
            version: FORMAT_VERSION,
            config: serde_json::Value::Null,
            images,
        }
    }
}

/// Checks that image ids are unique.
pub fn check_unique_ids(images: &[ImageAnnotations]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for img in images {
        if !seen.insert(img.image_id.as_str()) {
            return Err(Error::DuplicateId(img.image_id.clone()));
        }
    }
    Ok(())
}

pub fn dataset_to_json(images: &[ImageAnnotations]) -> Result<String> {
    dataset_to_json_with_config(images, serde_json::Value::Null)
}

/// As [`dataset_to_json`], recording `config` alongside the images.
pub fn dataset_to_json_with_config(images: &[ImageAnnotations], config: serde_json::Value) -> Result<String> {
    let file = DatasetFile {
        config,
        ..DatasetFile::new(images.to_vec())
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn dataset_from_json(text: &str) -> Result<Vec<ImageAnnotations>> {
    let file: DatasetFile = serde_json::from_str(text)?;
    if file.format != DATASET_FORMAT {
        return Err(Error::InvalidValue(format!(
            "expected format `{DATASET_FORMAT}`, found `{}`",
            file.format
        )));
    }
    check_unique_ids(&file.images)?;
    Ok(file.images)
}

pub fn read_dataset_json(path: &Path) -> Result<Vec<ImageAnnotations>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_json(&text)
}
