//! Seeded scene/object pairing, placement and composition.
//!
//! All randomness is drawn up front by [`sample_jobs`]; rendering a job is a
//! pure function of the job and the pool, so batches are reproducible under
//! any scheduling.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::blending::{composite_over, poisson_blend_with, BlendRegion, GuidanceMode};
use crate::coco::{build_dataset, serialize, CocoDataset, ANNOTATIONS_FILE};
use crate::error::{Error, Result};
use crate::io;
use crate::outline::{outline_to_polygon, polygon_metrics, Point, Polygon};
use crate::pool::{Manifest, Pool};
use crate::raster::{scaled_dims, AlphaMap, BinaryMask, RgbImage};
use crate::solver::CgOptions;

pub const PLACEMENT_RETRIES: usize = 3;
pub const IMAGES_DIR: &str = "images";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    /// Inclusive range of placements per image.
    pub objects_per_image: (usize, usize),
    /// Scale range as a fraction of `min(scene_w, scene_h) / max(obj_w, obj_h)`.
    pub scale_range: (f64, f64),
    pub margin: usize,
    pub mode: GuidanceMode,
    /// Pixels with scaled alpha above this are re-solved by the blend.
    pub region_alpha: f64,
    pub cg: CgOptions,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            objects_per_image: (1, 3),
            scale_range: (0.2, 0.7),
            margin: 2,
            mode: GuidanceMode::MixedGradients,
            region_alpha: 0.05,
            cg: CgOptions::default(),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.objects_per_image;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidArgument(format!("objects per image must satisfy 1 <= min <= max, got {lo}..={hi}")));
        }
        let (slo, shi) = self.scale_range;
        if !(slo > 0.0 && slo <= shi && shi.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale range must satisfy 0 < min <= max, got [{slo}, {shi}]")));
        }
        if !(0.0..1.0).contains(&self.region_alpha) {
            return Err(Error::InvalidArgument(format!("region alpha must lie in [0, 1), got {}", self.region_alpha)));
        }
        self.cg.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub object_id: String,
    pub scale: f64,
    /// Top-left corner of the scaled object in scene pixels.
    pub position: Point,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthJob {
    pub index: usize,
    pub scene_id: String,
    pub placements: Vec<Placement>,
    pub seed: u64,
}

impl SynthJob {
    pub fn file_name(&self) -> String {
        format!("{}_{}.png", self.seed, self.scene_id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthAnnotation {
    pub object_id: String,
    pub category: String,
    pub polygon: Polygon,
    /// `[x, y, w, h]`
    pub bbox: [f64; 4],
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthResult {
    /// Relative to the output `images/` directory.
    pub file_name: String,
    pub width: usize,
    pub height: usize,
    pub annotations: Vec<SynthAnnotation>,
}

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of job `index` in a batch seeded with `seed`: the `index + 1`-th
/// SplitMix64 output of a stream started at `seed`.
pub fn job_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draw scale and position for an object of `obj` dims in a scene of `scene`
/// dims, avoiding positions already used in this job.
fn place(
    rng: &mut ChaCha8Rng,
    object_id: &str,
    obj: (usize, usize),
    scene: (usize, usize),
    taken: &[Point],
    params: &SynthParams,
) -> Result<Placement> {
    let base = scene.0.min(scene.1) as f64 / obj.0.max(obj.1) as f64;
    let m = params.margin;
    for _ in 0..=PLACEMENT_RETRIES {
        let scale = base * uniform(rng, params.scale_range.0, params.scale_range.1);
        let (w, h) = scaled_dims(obj.0, obj.1, scale)?;
        if w + 2 * m > scene.0 || h + 2 * m > scene.1 {
            continue;
        }
        let x = rng.random_range(m..=scene.0 - m - w);
        let y = rng.random_range(m..=scene.1 - m - h);
        let position = Point::new(x as f64, y as f64);
        if taken.contains(&position) {
            continue;
        }
        return Ok(Placement {
            object_id: object_id.to_string(),
            scale,
            position,
        });
    }
    Err(Error::PlacementInfeasible(format!(
        "object {object_id} ({}x{}) does not fit scene {}x{} with a {m}-px margin",
        obj.0, obj.1, scene.0, scene.1
    )))
}

/// Draw `n_images` jobs. Scenes and objects are drawn uniformly with
/// replacement; each job's draws come from its own generator seeded with
/// [`job_seed`].
pub fn sample_jobs(manifest: &Manifest, n_images: usize, seed: u64, params: &SynthParams) -> Result<Vec<SynthJob>> {
    params.validate()?;
    if manifest.scenes.is_empty() {
        return Err(Error::EmptyPool("scenes"));
    }
    if manifest.objects.is_empty() {
        return Err(Error::EmptyPool("objects"));
    }
    (0..n_images)
        .map(|index| {
            let job_seed = job_seed(seed, index);
            let mut rng = ChaCha8Rng::seed_from_u64(job_seed);
            let scene = &manifest.scenes[rng.random_range(0..manifest.scenes.len())];
            let count = rng.random_range(params.objects_per_image.0..=params.objects_per_image.1);
            let mut placements: Vec<Placement> = Vec::with_capacity(count);
            for _ in 0..count {
                let object = &manifest.objects[rng.random_range(0..manifest.objects.len())];
                let taken: Vec<Point> = placements.iter().map(|p| p.position).collect();
                let obj_dims = (object.derived.width, object.derived.height);
                placements.push(place(&mut rng, &object.id, obj_dims, (scene.width, scene.height), &taken, params)?);
            }
            Ok(SynthJob {
                index,
                scene_id: scene.id.clone(),
                placements,
                seed: job_seed,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ObjectAsset {
    pub category: String,
    pub image: RgbImage,
    pub alpha: AlphaMap,
    pub polygon: Polygon,
}

/// Decoded pool content referenced by a batch.
#[derive(Clone, Debug, Default)]
pub struct Assets {
    pub scenes: HashMap<String, RgbImage>,
    pub objects: HashMap<String, ObjectAsset>,
}

impl Assets {
    pub fn load(pool: &Pool, jobs: &[SynthJob]) -> Result<Self> {
        let mut assets = Assets::default();
        for job in jobs {
            if !assets.scenes.contains_key(&job.scene_id) {
                let record = pool.manifest.scene(&job.scene_id).ok_or_else(|| Error::UnknownRecord(job.scene_id.clone()))?;
                assets.scenes.insert(job.scene_id.clone(), pool.load_scene(record)?);
            }
            for p in &job.placements {
                if assets.objects.contains_key(&p.object_id) {
                    continue;
                }
                let record = pool.manifest.object(&p.object_id).ok_or_else(|| Error::UnknownRecord(p.object_id.clone()))?;
                let asset = ObjectAsset {
                    category: record.category.clone(),
                    image: pool.load_object_image(record)?,
                    alpha: pool.load_object_alpha(record)?,
                    polygon: outline_to_polygon(&record.derived.outline),
                };
                assets.objects.insert(p.object_id.clone(), asset);
            }
        }
        Ok(assets)
    }
}

fn stage<T>(index: usize, stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Job {
        index,
        stage,
        source: Box::new(e),
    })
}

/// Composite and blend every placement in order; later placements land on top.
pub fn render_job(job: &SynthJob, assets: &Assets, params: &SynthParams) -> Result<(RgbImage, Vec<SynthAnnotation>)> {
    let i = job.index;
    let mut canvas = assets
        .scenes
        .get(&job.scene_id)
        .cloned()
        .ok_or_else(|| Error::UnknownRecord(job.scene_id.clone()))?;
    let (w, h) = canvas.dims();
    let mut annotations = Vec::with_capacity(job.placements.len());
    for p in &job.placements {
        let asset = assets.objects.get(&p.object_id).ok_or_else(|| Error::UnknownRecord(p.object_id.clone()))?;
        let image = stage(i, "scale", asset.image.scale_bilinear(p.scale))?;
        let alpha = stage(i, "scale", asset.alpha.scale_bilinear(p.scale))?;
        let offset = (p.position.x as i64, p.position.y as i64);
        let composite = stage(i, "composite", composite_over(&canvas, &image, &alpha, offset))?;
        let mut region = BinaryMask::empty(w, h)?;
        for y in 0..alpha.height() {
            for x in 0..alpha.width() {
                if alpha.get(x, y) > params.region_alpha {
                    region.set(x + offset.0 as usize, y + offset.1 as usize, true);
                }
            }
        }
        canvas = if region.is_empty() {
            composite
        } else {
            let region = BlendRegion { mask: region, offset: (0, 0) };
            stage(i, "blend", poisson_blend_with(&canvas, &composite, &region, params.mode, &params.cg))?
        };

        let polygon = asset
            .polygon
            .scaled_translated(p.scale, p.position)
            .clamped(Point::new(0.0, 0.0), Point::new((w - 1) as f64, (h - 1) as f64));
        let metrics = stage(i, "annotate", polygon_metrics(&polygon))?;
        annotations.push(SynthAnnotation {
            object_id: p.object_id.clone(),
            category: asset.category.clone(),
            polygon,
            bbox: metrics.bbox,
            area: metrics.area,
        });
    }
    Ok((canvas, annotations))
}

/// Render a job and write `images/<seed>_<scene_id>.png` under `out_dir`.
pub fn run_job(job: &SynthJob, assets: &Assets, params: &SynthParams, out_dir: &Path) -> Result<SynthResult> {
    let (image, annotations) = render_job(job, assets, params)?;
    let file_name = job.file_name();
    stage(job.index, "write", io::save_rgb_png(&image, &out_dir.join(IMAGES_DIR).join(&file_name)))?;
    Ok(SynthResult {
        file_name,
        width: image.width(),
        height: image.height(),
        annotations,
    })
}

/// Run jobs on `threads` workers (0 = all cores). Results keep job order;
/// `progress` receives the number of finished jobs after each one.
pub fn run_batch(
    jobs: &[SynthJob],
    assets: &Assets,
    params: &SynthParams,
    out_dir: &Path,
    threads: usize,
    progress: &(dyn Fn(usize) + Sync),
) -> Result<Vec<SynthResult>> {
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let done = AtomicUsize::new(0);
    workers.install(|| {
        jobs.par_iter()
            .map(|job| {
                let result = run_job(job, assets, params, out_dir)?;
                progress(done.fetch_add(1, Ordering::Relaxed) + 1);
                Ok(result)
            })
            .collect()
    })
}

/// Sample, render and annotate `n_images` composites into `out_dir`
/// (`images/` plus `annotations.json`).
pub fn synthesize(
    pool: &Pool,
    out_dir: &Path,
    n_images: usize,
    seed: u64,
    params: &SynthParams,
    threads: usize,
    progress: &(dyn Fn(usize) + Sync),
) -> Result<CocoDataset> {
    let jobs = sample_jobs(&pool.manifest, n_images, seed, params)?;
    let assets = Assets::load(pool, &jobs)?;
    let results = run_batch(&jobs, &assets, params, out_dir, threads, progress)?;
    let dataset = build_dataset(&results, &pool.manifest.categories())?;
    io::write_atomic(&out_dir.join(ANNOTATIONS_FILE), &serialize(&dataset)?)?;
    Ok(dataset)
}
