//! Polar outlines: an anchor point plus the distance to the object boundary
//! along `K` evenly spaced directions.
//!
//! Direction `k` points at angle `2πk/K`, measured from +x toward +y (image
//! rows grow downward, so increasing angle turns clockwise on screen).

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

pub const DEFAULT_DIRECTIONS: usize = 16;

/// Coarse ray step in pixels.
pub const RAY_STEP: f64 = 0.25;
/// Refinement step used inside the last coarse bracket.
pub const REFINE_STEP: f64 = 0.05;
/// Consecutive rejected jitter draws before giving up.
pub const MAX_JITTER_REJECTIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Pixel whose center is nearest; ties round toward +∞.
    pub fn nearest_pixel(&self) -> (i64, i64) {
        ((self.x + 0.5).floor() as i64, (self.y + 0.5).floor() as i64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolarOutline {
    pub anchor: Point,
    pub distances: Vec<f64>,
}

impl PolarOutline {
    pub fn new(anchor: Point, distances: Vec<f64>) -> Result<Self> {
        if distances.len() < 3 {
            return Err(Error::InvalidArgument(format!("outline needs at least 3 directions, got {}", distances.len())));
        }
        if !anchor.x.is_finite() || !anchor.y.is_finite() {
            return Err(Error::InvalidArgument("outline anchor is not finite".into()));
        }
        if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidArgument("outline distances must be finite and non-negative".into()));
        }
        Ok(Self { anchor, distances })
    }

    pub fn k(&self) -> usize {
        self.distances.len()
    }

    pub fn angle(&self, k: usize) -> f64 {
        direction_angle(k, self.k())
    }
}

pub fn direction_angle(k: usize, count: usize) -> f64 {
    2.0 * PI * k as f64 / count as f64
}

#[derive(Serialize, Deserialize)]
struct OutlineWire {
    anchor: [f64; 2],
    k: usize,
    d: Vec<f64>,
}

impl Serialize for PolarOutline {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OutlineWire {
            anchor: [self.anchor.x, self.anchor.y],
            k: self.k(),
            d: self.distances.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolarOutline {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = OutlineWire::deserialize(d)?;
        if wire.k != wire.d.len() {
            return Err(serde::de::Error::custom(format!("outline k = {} but {} distances", wire.k, wire.d.len())));
        }
        PolarOutline::new(Point::new(wire.anchor[0], wire.anchor[1]), wire.d).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidArgument(format!("polygon needs at least 3 vertices, got {}", vertices.len())));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidArgument("polygon vertex is not finite".into()));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// `v ↦ scale·v + offset` applied to every vertex.
    pub fn scaled_translated(&self, scale: f64, offset: Point) -> Polygon {
        Polygon {
            vertices: self
                .vertices
                .iter()
                .map(|v| Point::new(scale * v.x + offset.x, scale * v.y + offset.y))
                .collect(),
        }
    }

    pub fn clamped(&self, min: Point, max: Point) -> Polygon {
        Polygon {
            vertices: self
                .vertices
                .iter()
                .map(|v| Point::new(v.x.clamp(min.x, max.x), v.y.clamp(min.y, max.y)))
                .collect(),
        }
    }

    /// `[x1, y1, x2, y2, ...]`
    pub fn flatten(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|p| [p.x, p.y]).collect()
    }
}

/// Mean of the foreground pixel coordinates.
pub fn mass_center(mask: &BinaryMask) -> Result<Point> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(Point::new(sx / n as f64, sy / n as f64))
}

/// The mass center when it lands on foreground, otherwise the foreground
/// pixel nearest to it (first in raster order on ties).
pub fn interior_anchor(mask: &BinaryMask) -> Result<Point> {
    let center = mass_center(mask)?;
    if sample(mask, center) == Some(true) {
        return Ok(center);
    }
    let mut best = (f64::INFINITY, center);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let d = (x as f64 - center.x).powi(2) + (y as f64 - center.y).powi(2);
            if mask.get(x, y) && d < best.0 {
                best = (d, Point::new(x as f64, y as f64));
            }
        }
    }
    Ok(best.1)
}

fn sample(mask: &BinaryMask, p: Point) -> Option<bool> {
    let (x, y) = p.nearest_pixel();
    if x < 0 || y < 0 || x >= mask.width() as i64 || y >= mask.height() as i64 {
        None
    } else {
        Some(mask.get(x as usize, y as usize))
    }
}

fn check_anchor(mask: &BinaryMask, anchor: Point) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    match sample(mask, anchor) {
        Some(true) => Ok(()),
        _ => Err(Error::AnchorOutsideMask { x: anchor.x, y: anchor.y }),
    }
}

/// Distance to the outermost foreground sample along each of `k` rays.
///
/// Each ray is sampled every [`RAY_STEP`] pixels until it leaves the image;
/// the last coarse hit is refined at [`REFINE_STEP`] inside the following
/// bracket. Non-star-convex shapes therefore report their outermost crossing.
pub fn ray_distances(mask: &BinaryMask, anchor: Point, k: usize) -> Result<PolarOutline> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("direction count must be at least 3, got {k}")));
    }
    check_anchor(mask, anchor)?;
    let distances = (0..k)
        .map(|dir| {
            let theta = direction_angle(dir, k);
            let (dy, dx) = theta.sin_cos();
            let at = |t: f64| Point::new(anchor.x + t * dx, anchor.y + t * dy);
            let mut last = 0.0;
            let mut i = 0u32;
            loop {
                let t = i as f64 * RAY_STEP;
                match sample(mask, at(t)) {
                    None => break,
                    Some(true) => last = t,
                    Some(false) => {}
                }
                i += 1;
            }
            let mut refined = last;
            let fine_steps = (RAY_STEP / REFINE_STEP).round() as u32;
            for j in 1..fine_steps {
                let t = last + j as f64 * REFINE_STEP;
                if sample(mask, at(t)) == Some(true) {
                    refined = t;
                }
            }
            refined
        })
        .collect();
    PolarOutline::new(anchor, distances)
}

/// Default jitter radius: 5% of the mask's bounding-box diagonal.
pub fn default_jitter_radius(mask: &BinaryMask) -> Result<f64> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(Error::EmptyMask);
    }
    Ok(0.05 * ((x1 - x0) as f64).hypot((y1 - y0) as f64))
}

/// Outlines measured from anchors drawn uniformly in a disc around `center`.
///
/// Anchors whose nearest pixel is background or off-image are redrawn; after
/// [`MAX_JITTER_REJECTIONS`] consecutive rejections the call fails.
pub fn jittered_samples<R: Rng + ?Sized>(
    mask: &BinaryMask,
    center: Point,
    jitter_radius: f64,
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<PolarOutline>> {
    if !(jitter_radius >= 0.0) || !jitter_radius.is_finite() {
        return Err(Error::InvalidArgument(format!("jitter radius must be finite and >= 0, got {jitter_radius}")));
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rejections = 0;
        let anchor = loop {
            let r = jitter_radius * rng.random::<f64>().sqrt();
            let phi = 2.0 * PI * rng.random::<f64>();
            let candidate = Point::new(center.x + r * phi.cos(), center.y + r * phi.sin());
            if sample(mask, candidate) == Some(true) {
                break candidate;
            }
            rejections += 1;
            if rejections >= MAX_JITTER_REJECTIONS {
                return Err(Error::JitterExhausted(rejections));
            }
        };
        out.push(ray_distances(mask, anchor, k)?);
    }
    Ok(out)
}

pub fn outline_to_polygon(outline: &PolarOutline) -> Polygon {
    let k = outline.k();
    let vertices = outline
        .distances
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let (s, c) = direction_angle(i, k).sin_cos();
            Point::new(outline.anchor.x + d * c, outline.anchor.y + d * s)
        })
        .collect();
    Polygon { vertices }
}

/// Even-odd scanline fill: a pixel is set iff its center lies inside.
///
/// Edge crossings use the half-open rule `[y_min, y_max)` and each span
/// covers centers in `[x_in, x_out)`.
pub fn rasterize_polygon(poly: &Polygon, width: usize, height: usize) -> Result<BinaryMask> {
    let mut mask = BinaryMask::empty(width, height)?;
    let verts = poly.vertices();
    let mut crossings = Vec::new();
    for row in 0..height {
        let y = row as f64;
        crossings.clear();
        for (i, a) in verts.iter().enumerate() {
            let b = &verts[(i + 1) % verts.len()];
            if (a.y <= y && b.y > y) || (b.y <= y && a.y > y) {
                crossings.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            let start = span[0].ceil().max(0.0);
            let end = span[1].ceil().min(width as f64);
            if end <= start {
                continue;
            }
            for col in start as usize..end as usize {
                mask.set(col, row, true);
            }
        }
    }
    Ok(mask)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolygonMetrics {
    /// `[x, y, w, h]`
    pub bbox: [f64; 4],
    pub area: f64,
}

/// Axis-aligned bounding box and absolute shoelace area.
pub fn polygon_metrics(poly: &Polygon) -> Result<PolygonMetrics> {
    let verts = poly.vertices();
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut twice_area = 0.0;
    for (i, a) in verts.iter().enumerate() {
        let b = &verts[(i + 1) % verts.len()];
        twice_area += a.x * b.y - b.x * a.y;
        x0 = x0.min(a.x);
        y0 = y0.min(a.y);
        x1 = x1.max(a.x);
        y1 = y1.max(a.y);
    }
    let area = twice_area.abs() / 2.0;
    if area == 0.0 {
        return Err(Error::DegeneratePolygon);
    }
    Ok(PolygonMetrics {
        bbox: [x0, y0, x1 - x0, y1 - y0],
        area,
    })
}
