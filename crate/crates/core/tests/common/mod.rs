//! Fixtures and independent oracles shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use sceneforge::blending::{select_gradient, BlendRegion, GuidanceMode};
use sceneforge::io;
use sceneforge::pool::{IngestParams, Pool};
use sceneforge::raster::{BinaryMask, RgbImage, StructuringElement, Trimap, TrimapLabel};

pub const CATEGORIES: [&str; 10] = [
    "quaker chewy low fat chocolate chunk",
    "white rain sensations apple blossom hydrating body wash",
    "suave sweet guava nectar body wash",
    "white rain sensations ocean mist hydrating conditioner",
    "clif zbar chocolate brownie",
    "nature valley granola thins dark chocolate",
    "haagen dazs cookie dough",
    "dove beauty cream barh",
    "honey bunches of oats with almonds",
    "spongebob squarepants fruit snaks",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
}

pub fn random_mask(rng: &mut impl Rng, w: usize, h: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.random_bool(p)).unwrap()
}

pub fn disc_mask(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r).unwrap()
}

// ---------------------------------------------------------------- dense algebra

pub fn dense_solve(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let x = a.clone().lu().solve(&DVector::from_column_slice(b)).expect("singular oracle system");
    x.iter().copied().collect()
}

/// Random symmetric positive definite matrix as `Bᵀ B + n·I` with sparse `B`.
pub fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |i, j| if i == j || rng.random_bool(0.05) { rng.random_range(-1.0..1.0) } else { 0.0 });
    b.transpose() * &b + DMatrix::identity(n, n) * (0.1 * n as f64).max(1.0)
}

// ---------------------------------------------------------------- morphology

pub fn brute_erode(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let offsets = se.offsets();
    BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        offsets.iter().all(|&(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            nx < 0 || ny < 0 || nx >= m.width() as i64 || ny >= m.height() as i64 || m.get(nx as usize, ny as usize)
        })
    })
    .unwrap()
}

pub fn brute_dilate(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let offsets = se.offsets();
    BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        offsets.iter().any(|&(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            nx >= 0 && ny >= 0 && nx < m.width() as i64 && ny < m.height() as i64 && m.get(nx as usize, ny as usize)
        })
    })
    .unwrap()
}

// ---------------------------------------------------------------- matting

/// Window formula evaluated densely, window by window.
pub fn dense_laplacian(image: &RgbImage, radius: usize, eps: f64) -> DMatrix<f64> {
    let (w, h) = image.dims();
    let n = w * h;
    let ww = (2 * radius + 1).min(w);
    let wh = (2 * radius + 1).min(h);
    let mut l = DMatrix::zeros(n, n);
    for y0 in 0..=h - wh {
        for x0 in 0..=w - ww {
            let idx: Vec<(usize, Vector3<f64>)> = (y0..y0 + wh)
                .flat_map(|y| (x0..x0 + ww).map(move |x| (x, y)))
                .map(|(x, y)| (y * w + x, Vector3::from(image.pixel_f64(x, y))))
                .collect();
            let k = idx.len() as f64;
            let mu = idx.iter().fold(Vector3::zeros(), |a, (_, c)| a + c) / k;
            let mut cov = Matrix3::zeros();
            for (_, c) in &idx {
                cov += (c - mu) * (c - mu).transpose();
            }
            cov /= k;
            let lu = (cov + Matrix3::identity() * (eps / k)).lu();
            for (i, ci) in &idx {
                for (j, cj) in &idx {
                    let d = if i == j { 1.0 } else { 0.0 };
                    let solved = lu.solve(&(cj - mu)).unwrap();
                    l[(*i, *j)] += d - (1.0 + (ci - mu).dot(&solved)) / k;
                }
            }
        }
    }
    l
}

pub fn dense_alpha(image: &RgbImage, trimap: &Trimap, radius: usize, eps: f64) -> Vec<f64> {
    let l = dense_laplacian(image, radius, eps);
    let labels = trimap.as_slice();
    let u: Vec<usize> = (0..labels.len()).filter(|&p| labels[p] == TrimapLabel::Unknown).collect();
    let luu = DMatrix::from_fn(u.len(), u.len(), |a, b| l[(u[a], u[b])]);
    let rhs: Vec<f64> = u
        .iter()
        .map(|&p| {
            -(0..labels.len())
                .filter(|&q| labels[q] == TrimapLabel::Foreground)
                .map(|q| l[(p, q)])
                .sum::<f64>()
        })
        .collect();
    let x = dense_solve(&luu, &rhs);
    let mut out: Vec<f64> = labels.iter().map(|&l| if l == TrimapLabel::Foreground { 1.0 } else { 0.0 }).collect();
    for (a, &p) in u.iter().enumerate() {
        out[p] = x[a];
    }
    out
}

fn trimap_from(w: usize, h: usize, f: impl Fn(usize, usize) -> TrimapLabel) -> Trimap {
    Trimap::new(w, h, (0..w * h).map(|p| f(p % w, p / w)).collect()).unwrap()
}

/// Constant gray 1×11 strip: column 0 FG, column 10 BG, the rest unknown.
pub fn strip_fixture() -> (RgbImage, Trimap) {
    let img = RgbImage::filled(11, 1, [128, 128, 128]).unwrap();
    let t = trimap_from(11, 1, |x, _| match x {
        0 => TrimapLabel::Foreground,
        10 => TrimapLabel::Background,
        _ => TrimapLabel::Unknown,
    });
    (img, t)
}

/// 16×16, red for x < 8 and blue for x ≥ 8; columns 7 and 8 unknown.
pub fn band_fixture() -> (RgbImage, Trimap) {
    let img = RgbImage::from_fn(16, 16, |x, _| if x < 8 { [210, 40, 30] } else { [30, 60, 200] }).unwrap();
    let t = trimap_from(16, 16, |x, _| match x {
        0..=6 => TrimapLabel::Foreground,
        7 | 8 => TrimapLabel::Unknown,
        _ => TrimapLabel::Background,
    });
    (img, t)
}

// ---------------------------------------------------------------- blending

/// The 5-point stencil system assembled densely, one plane per channel.
pub fn dense_poisson(target: &RgbImage, source: &RgbImage, region: &BlendRegion, mode: GuidanceMode) -> [Vec<f64>; 3] {
    let (w, h) = target.dims();
    let cells: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| region.mask.get(x, y))
        .collect();
    let index: HashMap<(usize, usize), usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let n = cells.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = vec![vec![0.0; n]; 3];
    let src = |x: usize, y: usize| {
        let (sx, sy) = (x as i64 - region.offset.0, y as i64 - region.offset.1);
        source.pixel_f64(sx as usize, sy as usize)
    };
    for (i, &(x, y)) in cells.iter().enumerate() {
        let neighbors = [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)];
        a[(i, i)] = 4.0;
        for (qx, qy) in neighbors {
            let (sp, sq) = (src(x, y), src(qx, qy));
            let (tp, tq) = (target.pixel_f64(x, y), target.pixel_f64(qx, qy));
            match index.get(&(qx, qy)) {
                Some(&j) => a[(i, j)] -= 1.0,
                None => {
                    for c in 0..3 {
                        b[c][i] += tq[c];
                    }
                }
            }
            for c in 0..3 {
                b[c][i] += select_gradient(sp[c] - sq[c], tp[c] - tq[c], mode);
            }
        }
    }
    let mut planes = [0, 1, 2].map(|c| target.channel_f64(c));
    for c in 0..3 {
        let x = dense_solve(&a, &b[c]);
        for (i, &(px, py)) in cells.iter().enumerate() {
            planes[c][py * w + px] = x[i];
        }
    }
    planes
}

// ---------------------------------------------------------------- pool fixtures

/// Textured elliptical object on a plain backdrop, with an exact mask.
pub fn object_fixture(rng: &mut impl Rng, w: usize, h: usize) -> (RgbImage, BinaryMask) {
    let (cx, cy) = (w as f64 / 2.0 + rng.random_range(-2.0..2.0), h as f64 / 2.0 + rng.random_range(-2.0..2.0));
    let (rx, ry) = (w as f64 * rng.random_range(0.28..0.4), h as f64 * rng.random_range(0.28..0.4));
    let base: [u8; 3] = [rng.random_range(120..250), rng.random_range(0..120), rng.random_range(0..120)];
    let inside = move |x: usize, y: usize| ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2) <= 1.0;
    let img = RgbImage::from_fn(w, h, |x, y| {
        if inside(x, y) {
            let stripe = if (x / 3 + y / 5) % 2 == 0 { 20 } else { 0 };
            [base[0] - stripe, base[1] + stripe, base[2]]
        } else {
            [235, 235, 230]
        }
    })
    .unwrap();
    (img, BinaryMask::from_fn(w, h, inside).unwrap())
}

pub fn scene_fixture(rng: &mut impl Rng, w: usize, h: usize) -> RgbImage {
    let (a, b, c) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
    RgbImage::from_fn(w, h, |x, y| {
        let u = x as f64 / w as f64;
        let v = y as f64 / h as f64;
        let n: f64 = rng.random_range(-8.0..8.0);
        [
            (60.0 + 120.0 * (a * u + (1.0 - a) * v) + n).clamp(0.0, 255.0) as u8,
            (40.0 + 150.0 * (b * v + (1.0 - b) * (1.0 - u)) + n).clamp(0.0, 255.0) as u8,
            (80.0 + 100.0 * c + n).clamp(0.0, 255.0) as u8,
        ]
    })
    .unwrap()
}

/// Write object and scene fixtures under `dir/src` and ingest them into
/// `dir/pool` through the library.
pub fn build_pool(dir: &Path, n_objects: usize, n_scenes: usize, scene: (usize, usize), seed: u64) -> Pool {
    let mut r = rng(seed);
    let src = dir.join("src");
    let mut pool = Pool::open(dir.join("pool")).unwrap();
    let params = IngestParams::default();
    for i in 0..n_objects {
        let (img, mask) = object_fixture(&mut r, 40, 32);
        let (ip, mp) = (src.join(format!("obj{i}.png")), src.join(format!("obj{i}_mask.png")));
        io::save_rgb_png(&img, &ip).unwrap();
        io::save_mask(&mask, &mp).unwrap();
        pool.ingest_object(&ip, &mp, CATEGORIES[i % CATEGORIES.len()], &params).unwrap();
    }
    for i in 0..n_scenes {
        let img = scene_fixture(&mut r, scene.0, scene.1);
        let p = src.join(format!("scene{i}.jpg"));
        io::write_atomic(&p, &io::jpeg_bytes(&img, 90).unwrap()).unwrap();
        pool.ingest_scene(&p, "indoor").unwrap();
    }
    pool.save().unwrap();
    pool
}

// ---------------------------------------------------------------- COCO consumer

/// Index built the way common COCO tooling does on load: required keys per
/// record, id maps, and image → annotation lists.
pub struct CocoIndex {
    pub images: HashMap<u64, Value>,
    pub annotations: HashMap<u64, Value>,
    pub categories: HashMap<u64, Value>,
    pub image_annotations: HashMap<u64, Vec<u64>>,
}

fn require<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a Value, String> {
    v.get(key).ok_or_else(|| format!("{ctx}: missing {key:?}"))
}

fn id_of(v: &Value, ctx: &str) -> Result<u64, String> {
    require(v, "id", ctx)?.as_u64().ok_or_else(|| format!("{ctx}: id is not an unsigned integer"))
}

pub fn coco_reference_load(bytes: &[u8]) -> Result<CocoIndex, String> {
    let root: Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    let list = |key: &str| -> Result<Vec<Value>, String> {
        root.get(key)
            .and_then(Value::as_array)
            .cloned()
            .ok_or_else(|| format!("top level: {key:?} missing or not a list"))
    };
    let mut index = CocoIndex {
        images: HashMap::new(),
        annotations: HashMap::new(),
        categories: HashMap::new(),
        image_annotations: HashMap::new(),
    };
    for img in list("images")? {
        for key in ["file_name", "width", "height"] {
            require(&img, key, "image")?;
        }
        let id = id_of(&img, "image")?;
        if index.images.insert(id, img).is_some() {
            return Err(format!("duplicate image id {id}"));
        }
    }
    for cat in list("categories")? {
        require(&cat, "name", "category")?;
        let id = id_of(&cat, "category")?;
        if index.categories.insert(id, cat).is_some() {
            return Err(format!("duplicate category id {id}"));
        }
    }
    for ann in list("annotations")? {
        for key in ["image_id", "category_id", "segmentation", "area", "bbox", "iscrowd"] {
            require(&ann, key, "annotation")?;
        }
        let id = id_of(&ann, "annotation")?;
        let image_id = ann["image_id"].as_u64().ok_or("annotation: bad image_id")?;
        let category_id = ann["category_id"].as_u64().ok_or("annotation: bad category_id")?;
        if !index.images.contains_key(&image_id) {
            return Err(format!("annotation {id}: unknown image {image_id}"));
        }
        if !index.categories.contains_key(&category_id) {
            return Err(format!("annotation {id}: unknown category {category_id}"));
        }
        let bbox = ann["bbox"].as_array().ok_or("annotation: bbox is not a list")?;
        if bbox.len() != 4 || bbox.iter().any(|v| !v.is_number()) {
            return Err(format!("annotation {id}: bbox must be 4 numbers"));
        }
        let polys = ann["segmentation"].as_array().ok_or("annotation: segmentation is not a polygon list")?;
        for poly in polys {
            let coords = poly.as_array().ok_or("annotation: polygon is not a list")?;
            if coords.len() < 6 || coords.len() % 2 != 0 || coords.iter().any(|v| !v.is_number()) {
                return Err(format!("annotation {id}: malformed polygon"));
            }
        }
        index.image_annotations.entry(image_id).or_default().push(id);
        if index.annotations.insert(id, ann).is_some() {
            return Err(format!("duplicate annotation id {id}"));
        }
    }
    Ok(index)
}

/// `[x, y, w, h]` from the raw JSON polygon, recomputed independently.
pub fn polygon_bounds(segmentation: &Value) -> [f64; 4] {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for poly in segmentation.as_array().unwrap() {
        for (i, v) in poly.as_array().unwrap().iter().enumerate() {
            if i % 2 == 0 { &mut xs } else { &mut ys }.push(v.as_f64().unwrap());
        }
    }
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [min(&xs), min(&ys), max(&xs) - min(&xs), max(&ys) - min(&ys)]
}

pub fn distinct<T: std::hash::Hash + Eq>(items: impl IntoIterator<Item = T>) -> usize {
    items.into_iter().collect::<HashSet<_>>().len()
}

/// Union of discs that all contain `anchor`: star-shaped about it.
pub fn star_blob(rng: &mut impl Rng, size: usize, anchor: (f64, f64)) -> BinaryMask {
    let lobes: Vec<(f64, f64, f64)> = (0..5)
        .map(|_| {
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let off = rng.random_range(0.0..15.0);
            let r: f64 = rng.random_range(22.0..40.0);
            (anchor.0 + off * ang.cos(), anchor.1 + off * ang.sin(), r.max(off + 2.0))
        })
        .collect();
    BinaryMask::from_fn(size, size, |x, y| {
        lobes.iter().any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
    })
    .unwrap()
}
