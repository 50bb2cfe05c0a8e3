//! Object pool and scene collection.
//!
//! On disk a pool is a directory holding `manifest.json`,
//! `objects/<id>/{image,mask,alpha}.png` and `scenes/<id>.jpg`. Record paths
//! are stored relative to the pool root.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;
use crate::matting::{solve_alpha, MattingParams};
use crate::outline::{interior_anchor, outline_to_polygon, ray_distances, rasterize_polygon, Point, PolarOutline, DEFAULT_DIRECTIONS};
use crate::raster::{
    make_trimap, AlphaMap, BinaryMask, RgbImage, StructuringElement, Trimap, TrimapLabel, DEFAULT_TRIMAP_ELEMENT,
};

pub const MANIFEST_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Outline-vs-mask IoU below which a mask is flagged incomplete.
pub const DEFAULT_INCOMPLETE_IOU: f64 = 0.9;

type Extra = BTreeMap<String, Value>;

fn ser_point<S: Serializer>(p: &Point, s: S) -> std::result::Result<S::Ok, S::Error> {
    [p.x, p.y].serialize(s)
}

fn de_point<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Point, D::Error> {
    let [x, y] = <[f64; 2]>::deserialize(d)?;
    Ok(Point::new(x, y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectDerived {
    #[serde(serialize_with = "ser_point", deserialize_with = "de_point")]
    pub center: Point,
    pub outline: PolarOutline,
    pub alpha_path: String,
    pub mask_incomplete: bool,
    pub width: usize,
    pub height: usize,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: String,
    pub category: String,
    pub image_path: String,
    pub mask_path: String,
    pub derived: ObjectDerived,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub image_path: String,
    pub label: String,
    pub width: usize,
    pub height: usize,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub objects: Vec<ObjectRecord>,
    pub scenes: Vec<SceneRecord>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION.to_string(),
            objects: Vec::new(),
            scenes: Vec::new(),
            extra: Extra::new(),
        }
    }
}

impl Manifest {
    pub fn object(&self, id: &str) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn scene(&self, id: &str) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.id == id)
    }

    /// Distinct object categories in order of first appearance.
    pub fn categories(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.objects
            .iter()
            .filter(|o| seen.insert(o.category.as_str()))
            .map(|o| o.category.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::VersionUnsupported(self.version.clone()));
        }
        let mut seen = HashSet::new();
        for id in self.objects.iter().map(|o| &o.id) {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        seen.clear();
        for id in self.scenes.iter().map(|s| &s.id) {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(())
    }

    /// Canonical form: sorted keys, two-space indent, trailing newline.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        canonical_json(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        // Check the version before the schema so old or future layouts get a
        // precise error.
        let value: Value = serde_json::from_slice(bytes).map_err(Error::parse)?;
        match value.get("version") {
            Some(Value::String(v)) if v == MANIFEST_VERSION => {}
            Some(Value::String(v)) => return Err(Error::VersionUnsupported(v.clone())),
            Some(other) => return Err(Error::VersionUnsupported(other.to_string())),
            None => return Err(Error::VersionUnsupported(String::new())),
        }
        let manifest: Manifest = serde_json::from_slice(bytes).map_err(Error::parse)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Serialize through `serde_json::Value`, whose maps are key-sorted.
pub(crate) fn canonical_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let value = serde_json::to_value(v).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = serde_json::to_vec_pretty(&value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    io::write_atomic(path, &manifest.to_bytes()?)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::from_bytes(&fs::read(path)?)
}

/// Keeps the largest 8-connected component; ties go to the component whose
/// first pixel comes first in raster order.
pub fn largest_component(mask: &BinaryMask) -> Result<BinaryMask> {
    let (w, h) = mask.dims();
    let mut label = vec![0u32; w * h];
    let mut best = (0usize, 0u32);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.as_slice()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (x, y) = ((p % w) as i64, (p / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask.as_slice()[q] && label[q] == 0 {
                        label[q] = next;
                        queue.push_back(q);
                    }
                }
            }
        }
        if size > best.0 {
            best = (size, next);
        }
    }
    if best.0 == 0 {
        return Err(Error::EmptyMask);
    }
    BinaryMask::new(w, h, label.into_iter().map(|l| l == best.1).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IngestParams {
    pub directions: usize,
    pub trimap_erode: StructuringElement,
    pub trimap_dilate: StructuringElement,
    pub matting: MattingParams,
    pub incomplete_iou: f64,
}

impl Default for IngestParams {
    fn default() -> Self {
        Self {
            directions: DEFAULT_DIRECTIONS,
            trimap_erode: DEFAULT_TRIMAP_ELEMENT,
            trimap_dilate: DEFAULT_TRIMAP_ELEMENT,
            matting: MattingParams::default(),
            incomplete_iou: DEFAULT_INCOMPLETE_IOU,
        }
    }
}

/// Everything ingestion derives from an image and its rough mask.
#[derive(Clone, Debug)]
pub struct ObjectAnalysis {
    pub component: BinaryMask,
    pub center: Point,
    pub outline: PolarOutline,
    pub outline_iou: f64,
    pub mask_incomplete: bool,
    pub trimap: Trimap,
    pub alpha: AlphaMap,
}

pub fn analyze_object(image: &RgbImage, mask: &BinaryMask, params: &IngestParams) -> Result<ObjectAnalysis> {
    if image.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            actual: mask.dims(),
        });
    }
    let component = largest_component(mask)?;
    let center = interior_anchor(&component)?;
    let outline = ray_distances(&component, center, params.directions)?;
    let traced = rasterize_polygon(&outline_to_polygon(&outline), image.width(), image.height())?;
    let outline_iou = traced.iou(&component);
    let mask_incomplete = outline_iou < params.incomplete_iou;
    let mut trimap = make_trimap(&component, &params.trimap_erode, &params.trimap_dilate)?;
    if mask_incomplete {
        // Let matting decide wherever outline and mask disagree.
        for y in 0..image.height() {
            for x in 0..image.width() {
                if traced.get(x, y) != component.get(x, y) {
                    trimap.set(x, y, TrimapLabel::Unknown);
                }
            }
        }
    }
    let alpha = solve_alpha(image, &trimap, &params.matting)?;
    Ok(ObjectAnalysis {
        component,
        center,
        outline,
        outline_iou,
        mask_incomplete,
        trimap,
        alpha,
    })
}

fn content_id(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn is_complete_jpeg(bytes: &[u8]) -> bool {
    let trimmed = match bytes.iter().rposition(|&b| b != 0) {
        Some(end) => &bytes[..=end],
        None => return false,
    };
    trimmed.ends_with(&[0xFF, 0xD9])
}

fn decode_scene(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    if bytes.starts_with(&[0xFF, 0xD8]) && !is_complete_jpeg(bytes) {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            message: "truncated JPEG stream (missing end-of-image marker)".into(),
        });
    }
    io::rgb_from_bytes(bytes, path)
}

/// A pool directory and its manifest.
#[derive(Clone, Debug)]
pub struct Pool {
    root: PathBuf,
    pub manifest: Manifest,
}

impl Pool {
    /// Open `root`, starting an empty manifest if none exists yet.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let path = root.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            load_manifest(&path)?
        } else {
            Manifest::default()
        };
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn save(&self) -> Result<()> {
        save_manifest(&self.manifest, &self.root.join(MANIFEST_FILE))
    }

    /// Ingest one object photo and its rough mask. Re-ingesting identical
    /// inputs returns the existing record.
    pub fn ingest_object(&mut self, image_path: &Path, mask_path: &Path, category: &str, params: &IngestParams) -> Result<ObjectRecord> {
        let image_bytes = fs::read(image_path)?;
        let mask_bytes = fs::read(mask_path)?;
        let image = io::rgb_from_bytes(&image_bytes, image_path)?;
        let mask_img = io::decode_bytes(&mask_bytes, mask_path)?.into_luma8();
        let mask = BinaryMask::new(
            mask_img.width() as usize,
            mask_img.height() as usize,
            mask_img.into_raw().into_iter().map(|v| v > 127).collect(),
        )?;
        let id = content_id(&[&image_bytes, &mask_bytes, category.as_bytes()]);
        if let Some(existing) = self.manifest.object(&id) {
            return Ok(existing.clone());
        }
        let analysis = analyze_object(&image, &mask, params)?;

        let dir = format!("objects/{id}");
        let record = ObjectRecord {
            id: id.clone(),
            category: category.to_string(),
            image_path: format!("{dir}/image.png"),
            mask_path: format!("{dir}/mask.png"),
            derived: ObjectDerived {
                center: analysis.center,
                outline: analysis.outline,
                alpha_path: format!("{dir}/alpha.png"),
                mask_incomplete: analysis.mask_incomplete,
                width: image.width(),
                height: image.height(),
                extra: Extra::new(),
            },
            extra: Extra::new(),
        };
        io::save_rgb_png(&image, &self.resolve(&record.image_path))?;
        io::save_mask(&mask, &self.resolve(&record.mask_path))?;
        io::save_alpha(&analysis.alpha, &self.resolve(&record.derived.alpha_path))?;
        self.manifest.objects.push(record.clone());
        Ok(record)
    }

    /// Ingest one scene image; its id is a content-hash prefix, so repeated
    /// ingestion of the same file is a no-op.
    pub fn ingest_scene(&mut self, image_path: &Path, label: &str) -> Result<SceneRecord> {
        let bytes = fs::read(image_path)?;
        let image = decode_scene(&bytes, image_path)?;
        let id = content_id(&[&bytes]);
        if let Some(existing) = self.manifest.scene(&id) {
            return Ok(existing.clone());
        }
        let record = SceneRecord {
            id: id.clone(),
            image_path: format!("scenes/{id}.jpg"),
            label: label.to_string(),
            width: image.width(),
            height: image.height(),
            extra: Extra::new(),
        };
        let stored = if bytes.starts_with(&[0xFF, 0xD8]) {
            bytes
        } else {
            io::jpeg_bytes(&image, 95)?
        };
        io::write_atomic(&self.resolve(&record.image_path), &stored)?;
        self.manifest.scenes.push(record.clone());
        Ok(record)
    }

    pub fn load_object_image(&self, record: &ObjectRecord) -> Result<RgbImage> {
        io::load_rgb(&self.resolve(&record.image_path))
    }

    pub fn load_object_alpha(&self, record: &ObjectRecord) -> Result<AlphaMap> {
        io::load_alpha(&self.resolve(&record.derived.alpha_path))
    }

    pub fn load_scene(&self, record: &SceneRecord) -> Result<RgbImage> {
        io::load_rgb(&self.resolve(&record.image_path))
    }
}
