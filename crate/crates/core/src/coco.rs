//! COCO-style instance annotations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::pool::canonical_json;
use crate::synth::{SynthResult, IMAGES_DIR};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const SUPERCATEGORY: &str = "object";

type Extra = BTreeMap<String, Value>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub segmentation: Vec<Vec<f64>>,
    /// `[x, y, w, h]`
    pub bbox: [f64; 4],
    pub area: f64,
    pub iscrowd: u8,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    pub supercategory: String,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub licenses: Option<Vec<Value>>,
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl CocoDataset {
    /// Id uniqueness, references and polygon shape.
    pub fn check_integrity(&self) -> Result<()> {
        fn unique(kind: &str, ids: impl Iterator<Item = u64>) -> Result<HashSet<u64>> {
            let mut seen = HashSet::new();
            for id in ids {
                if !seen.insert(id) {
                    return Err(Error::InvalidDataset(format!("duplicate {kind} id {id}")));
                }
            }
            Ok(seen)
        }
        let images = unique("image", self.images.iter().map(|i| i.id))?;
        let categories = unique("category", self.categories.iter().map(|c| c.id))?;
        unique("annotation", self.annotations.iter().map(|a| a.id))?;
        for a in &self.annotations {
            if !images.contains(&a.image_id) {
                return Err(Error::InvalidDataset(format!("annotation {} references missing image {}", a.id, a.image_id)));
            }
            if !categories.contains(&a.category_id) {
                return Err(Error::InvalidDataset(format!(
                    "annotation {} references missing category {}",
                    a.id, a.category_id
                )));
            }
            if a.segmentation.is_empty() {
                return Err(Error::InvalidDataset(format!("annotation {} has no polygon", a.id)));
            }
            for poly in &a.segmentation {
                if poly.len() < 6 || poly.len() % 2 != 0 {
                    return Err(Error::InvalidDataset(format!(
                        "annotation {} has a polygon with {} coordinates",
                        a.id,
                        poly.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Exact axis-aligned bounds of a set of flattened polygons.
pub fn segmentation_bbox(segmentation: &[Vec<f64>]) -> [f64; 4] {
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for pair in segmentation.iter().flat_map(|p| p.chunks_exact(2)) {
        x0 = x0.min(pair[0]);
        y0 = y0.min(pair[1]);
        x1 = x1.max(pair[0]);
        y1 = y1.max(pair[1]);
    }
    [x0, y0, x1 - x0, y1 - y0]
}

/// Ids are assigned sequentially from 1 in input order.
pub fn build_dataset<S: AsRef<str>>(results: &[SynthResult], category_names: &[S]) -> Result<CocoDataset> {
    let mut category_ids = HashMap::new();
    let mut categories = Vec::with_capacity(category_names.len());
    for (i, name) in category_names.iter().enumerate() {
        let name = name.as_ref();
        let id = i as u64 + 1;
        if category_ids.insert(name.to_string(), id).is_some() {
            return Err(Error::DuplicateCategory(name.to_string()));
        }
        categories.push(CocoCategory {
            id,
            name: name.to_string(),
            supercategory: SUPERCATEGORY.to_string(),
            extra: Extra::new(),
        });
    }

    let mut images = Vec::with_capacity(results.len());
    let mut annotations = Vec::new();
    for (i, result) in results.iter().enumerate() {
        let image_id = i as u64 + 1;
        images.push(CocoImage {
            id: image_id,
            file_name: result.file_name.clone(),
            width: result.width,
            height: result.height,
            extra: Extra::new(),
        });
        for ann in &result.annotations {
            let category_id = *category_ids
                .get(&ann.category)
                .ok_or_else(|| Error::InvalidDataset(format!("category {:?} is not in the category list", ann.category)))?;
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id,
                segmentation: vec![ann.polygon.flatten()],
                bbox: ann.bbox,
                area: ann.area,
                iscrowd: 0,
                extra: Extra::new(),
            });
        }
    }
    let dataset = CocoDataset {
        info: Some(json!({
            "description": "synthetic object-in-scene composites",
            "version": "1.0",
        })),
        licenses: Some(vec![json!({"id": 1, "name": "unspecified", "url": ""})]),
        images,
        annotations,
        categories,
        extra: Extra::new(),
    };
    dataset.check_integrity()?;
    Ok(dataset)
}

/// Sorted keys, shortest round-trip reals, trailing newline.
pub fn serialize(dataset: &CocoDataset) -> Result<Vec<u8>> {
    dataset.check_integrity()?;
    canonical_json(dataset)
}

pub fn parse(bytes: &[u8]) -> Result<CocoDataset> {
    let dataset: CocoDataset = serde_json::from_slice(bytes).map_err(Error::parse)?;
    dataset.check_integrity()?;
    Ok(dataset)
}

/// Findings from checking an output directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub images: usize,
    pub annotations: usize,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Parse `annotations.json` and check every listed image exists with the
/// recorded dimensions and every bbox lies inside its image.
pub fn validate_output_dir(dir: &Path) -> Result<ValidationReport> {
    let path = dir.join(ANNOTATIONS_FILE);
    let dataset = parse(&fs::read(&path)?)?;
    let mut report = ValidationReport {
        images: dataset.images.len(),
        annotations: dataset.annotations.len(),
        problems: Vec::new(),
    };
    let mut dims = HashMap::new();
    for img in &dataset.images {
        dims.insert(img.id, (img.width as f64, img.height as f64));
        let file: PathBuf = dir.join(IMAGES_DIR).join(&img.file_name);
        match image::image_dimensions(&file) {
            Ok((w, h)) if (w as usize, h as usize) == (img.width, img.height) => {}
            Ok((w, h)) => report.problems.push(format!(
                "{}: size {w}x{h} differs from recorded {}x{}",
                file.display(),
                img.width,
                img.height
            )),
            Err(_) if !file.exists() => report.problems.push(format!("{}: missing", file.display())),
            Err(e) => report.problems.push(format!("{}: {e}", file.display())),
        }
    }
    for a in &dataset.annotations {
        let (w, h) = dims[&a.image_id];
        let [x, y, bw, bh] = a.bbox;
        if x < 0.0 || y < 0.0 || x + bw > w || y + bh > h {
            report.problems.push(format!("annotation {}: bbox {:?} leaves image {}", a.id, a.bbox, a.image_id));
        }
        if a.bbox != segmentation_bbox(&a.segmentation) {
            report.problems.push(format!("annotation {}: bbox does not match its polygon", a.id));
        }
    }
    Ok(report)
}
