//! Poisson (gradient-domain) blending and alpha over-compositing.
//!
//! For every region pixel `p` with 4-neighbors `N(p)` the blend solves
//!
//! ```text
//! |N(p)|·f_p − Σ_{q∈N(p)∩Ω} f_q = Σ_{q∈N(p)∖Ω} t_q + Σ_{q∈N(p)} v_pq
//! ```
//!
//! per channel, where `t` is the target and `v_pq` the guidance gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{quantize, AlphaMap, BinaryMask, RgbImage};
use crate::solver::{cg_solve, CgOptions, CgReport, SparseSystem, TripletBuilder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    #[serde(alias = "source")]
    SourceGradients,
    #[default]
    #[serde(alias = "mixed")]
    MixedGradients,
}

impl std::str::FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" | "source_gradients" => Ok(GuidanceMode::SourceGradients),
            "mixed" | "mixed_gradients" => Ok(GuidanceMode::MixedGradients),
            other => Err(Error::InvalidArgument(format!("unknown guidance mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GuidanceMode::SourceGradients => "source",
            GuidanceMode::MixedGradients => "mixed",
        })
    }
}

/// Pixels of the target to re-solve, and where the source sits in the target.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendRegion {
    pub mask: BinaryMask,
    /// Target pixel `(x, y)` reads source pixel `(x − dx, y − dy)`.
    pub offset: (i64, i64),
}

/// Guidance gradient for one pixel pair. Mixed mode keeps the target
/// gradient only when its magnitude is strictly larger.
pub fn select_gradient(source_diff: f64, target_diff: f64, mode: GuidanceMode) -> f64 {
    match mode {
        GuidanceMode::SourceGradients => source_diff,
        GuidanceMode::MixedGradients => {
            if target_diff.abs() > source_diff.abs() {
                target_diff
            } else {
                source_diff
            }
        }
    }
}

const NEIGHBORS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

#[derive(Clone, Debug)]
pub struct BlendOutcome {
    /// Unit-interval planes before quantization; region pixels are unclamped.
    pub planes: [Vec<f64>; 3],
    pub reports: Vec<CgReport>,
}

fn validate(target: &RgbImage, source: &RgbImage, region: &BlendRegion) -> Result<()> {
    let (w, h) = target.dims();
    if region.mask.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: region.mask.dims(),
        });
    }
    if region.mask.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let (sw, sh) = (source.width() as i64, source.height() as i64);
    for y in 0..h {
        for x in 0..w {
            if !region.mask.get(x, y) {
                continue;
            }
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                return Err(Error::RegionTouchesBorder);
            }
            // The pixel and its neighbors must read from inside the source.
            for (dx, dy) in [(0, 0)].into_iter().chain(NEIGHBORS) {
                let sx = x as i64 + dx - region.offset.0;
                let sy = y as i64 + dy - region.offset.1;
                if sx < 0 || sy < 0 || sx >= sw || sy >= sh {
                    return Err(Error::OutOfBounds);
                }
            }
        }
    }
    Ok(())
}

/// Solve the blend and return real-valued planes.
pub fn poisson_blend_planes(
    target: &RgbImage,
    source: &RgbImage,
    region: &BlendRegion,
    mode: GuidanceMode,
    cg: &CgOptions,
) -> Result<BlendOutcome> {
    validate(target, source, region)?;
    let (w, h) = target.dims();
    let sw = source.width();
    let t_planes = [0, 1, 2].map(|c| target.channel_f64(c));
    let s_planes = [0, 1, 2].map(|c| source.channel_f64(c));

    let mut slot = vec![usize::MAX; w * h];
    let mut pixels = Vec::new();
    for (p, &inside) in region.mask.as_slice().iter().enumerate() {
        if inside {
            slot[p] = pixels.len();
            pixels.push(p);
        }
    }

    let mut builder = TripletBuilder::with_capacity(pixels.len(), pixels.len() * 5);
    let mut rhs = vec![vec![0.0; pixels.len()]; 3];
    for (u, &p) in pixels.iter().enumerate() {
        let (x, y) = ((p % w) as i64, (p / w) as i64);
        let sp = ((y - region.offset.1) as usize) * sw + (x - region.offset.0) as usize;
        builder.add(u, u, NEIGHBORS.len() as f64);
        for (dx, dy) in NEIGHBORS {
            let q = ((y + dy) as usize) * w + (x + dx) as usize;
            let sq = ((y + dy - region.offset.1) as usize) * sw + (x + dx - region.offset.0) as usize;
            if slot[q] != usize::MAX {
                builder.add(u, slot[q], -1.0);
            }
            for c in 0..3 {
                let v = select_gradient(s_planes[c][sp] - s_planes[c][sq], t_planes[c][p] - t_planes[c][q], mode);
                rhs[c][u] += v;
                if slot[q] == usize::MAX {
                    rhs[c][u] += t_planes[c][q];
                }
            }
        }
    }
    let system = SparseSystem::new(builder.finish()?, rhs)?;
    let solution = cg_solve(&system, cg)?;
    let mut planes = t_planes;
    for (c, x) in solution.x.iter().enumerate() {
        for (&p, &v) in pixels.iter().zip(x) {
            planes[c][p] = v;
        }
    }
    Ok(BlendOutcome { planes, reports: solution.reports })
}

/// Seamless clone with the default solver settings.
pub fn poisson_blend(target: &RgbImage, source: &RgbImage, region: &BlendRegion, mode: GuidanceMode) -> Result<RgbImage> {
    poisson_blend_with(target, source, region, mode, &CgOptions::default())
}

/// Region pixels are clamped and quantized; all other pixels are copied
/// from the target untouched.
pub fn poisson_blend_with(
    target: &RgbImage,
    source: &RgbImage,
    region: &BlendRegion,
    mode: GuidanceMode,
    cg: &CgOptions,
) -> Result<RgbImage> {
    let outcome = poisson_blend_planes(target, source, region, mode, cg)?;
    let mut out = target.clone();
    let w = target.width();
    for (p, &inside) in region.mask.as_slice().iter().enumerate() {
        if inside {
            let rgb = [0, 1, 2].map(|c| quantize(outcome.planes[c][p]));
            out.set_pixel(p % w, p / w, rgb);
        }
    }
    Ok(out)
}

/// `out = α·object + (1 − α)·scene` over the placed rectangle.
pub fn composite_over(scene: &RgbImage, object: &RgbImage, alpha: &AlphaMap, offset: (i64, i64)) -> Result<RgbImage> {
    if object.dims() != alpha.dims() {
        return Err(Error::DimensionMismatch {
            expected: object.dims(),
            actual: alpha.dims(),
        });
    }
    let (ox, oy) = offset;
    if ox < 0
        || oy < 0
        || ox + object.width() as i64 > scene.width() as i64
        || oy + object.height() as i64 > scene.height() as i64
    {
        return Err(Error::OutOfBounds);
    }
    let mut out = scene.clone();
    for y in 0..object.height() {
        for x in 0..object.width() {
            let a = alpha.get(x, y);
            let (tx, ty) = (x + ox as usize, y + oy as usize);
            let o = object.pixel_f64(x, y);
            let s = scene.pixel_f64(tx, ty);
            out.set_pixel(tx, ty, [0, 1, 2].map(|c| quantize(a * o[c] + (1.0 - a) * s[c])));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    fn inner_region(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BlendRegion {
        BlendRegion {
            mask: BinaryMask::from_fn(w, h, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y)).unwrap(),
            offset: (0, 0),
        }
    }

    #[test]
    fn identical_source_reproduces_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_image(&mut rng, 12, 10);
        let region = inner_region(12, 10, 2, 2, 9, 8);
        for mode in [GuidanceMode::SourceGradients, GuidanceMode::MixedGradients] {
            assert_eq!(poisson_blend(&t, &t, &region, mode).unwrap(), t);
        }
    }

    #[test]
    fn flat_patch_in_flat_target_stays_flat() {
        let target = RgbImage::filled(10, 10, [quantize(0.5); 3]).unwrap();
        let source = RgbImage::filled(10, 10, [200, 10, 70]).unwrap();
        let region = inner_region(10, 10, 3, 3, 7, 7);
        let tight = CgOptions { tol: 1e-12, max_iter: None };
        let out = poisson_blend_planes(&target, &source, &region, GuidanceMode::SourceGradients, &tight).unwrap();
        let level = target.pixel_f64(0, 0)[0];
        for plane in &out.planes {
            assert!(plane.iter().all(|v| (v - level).abs() < 1e-6));
        }
    }

    #[test]
    fn offset_source_and_locality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = random_image(&mut rng, 16, 16);
        let source = random_image(&mut rng, 8, 8);
        let mut region = inner_region(16, 16, 6, 7, 11, 12);
        region.offset = (4, 5);
        let out = poisson_blend(&target, &source, &region, GuidanceMode::MixedGradients).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                if !region.mask.get(x, y) {
                    assert_eq!(out.pixel(x, y), target.pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_regions() {
        let img = RgbImage::filled(8, 8, [1, 2, 3]).unwrap();
        let edge = inner_region(8, 8, 0, 2, 3, 4);
        assert!(matches!(poisson_blend(&img, &img, &edge, GuidanceMode::MixedGradients), Err(Error::RegionTouchesBorder)));
        let empty = inner_region(8, 8, 0, 0, 0, 0);
        assert!(matches!(poisson_blend(&img, &img, &empty, GuidanceMode::MixedGradients), Err(Error::EmptyRegion)));
        let small = RgbImage::filled(4, 4, [0, 0, 0]).unwrap();
        let region = inner_region(8, 8, 2, 2, 6, 6);
        assert!(matches!(poisson_blend(&img, &small, &region, GuidanceMode::MixedGradients), Err(Error::OutOfBounds)));
    }

    #[test]
    fn mixed_selection_rule() {
        assert_eq!(select_gradient(0.1, -0.3, GuidanceMode::MixedGradients), -0.3);
        assert_eq!(select_gradient(0.3, -0.3, GuidanceMode::MixedGradients), 0.3);
        assert_eq!(select_gradient(-0.4, 0.3, GuidanceMode::MixedGradients), -0.4);
        assert_eq!(select_gradient(0.1, -0.3, GuidanceMode::SourceGradients), 0.1);
    }

    #[test]
    fn composite_extremes_and_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let scene = random_image(&mut rng, 10, 8);
        let obj = random_image(&mut rng, 4, 3);
        let ones = AlphaMap::new(4, 3, vec![1.0; 12]).unwrap();
        let zeros = AlphaMap::new(4, 3, vec![0.0; 12]).unwrap();
        let out = composite_over(&scene, &obj, &ones, (5, 2)).unwrap();
        for y in 0..8 {
            for x in 0..10 {
                let inside = (5..9).contains(&x) && (2..5).contains(&y);
                let expect = if inside { obj.pixel(x - 5, y - 2) } else { scene.pixel(x, y) };
                assert_eq!(out.pixel(x, y), expect);
            }
        }
        assert_eq!(composite_over(&scene, &obj, &zeros, (0, 0)).unwrap(), scene);

        let alpha = AlphaMap::new(4, 3, (0..12).map(|_| rng.random::<f64>()).collect()).unwrap();
        let out = composite_over(&scene, &obj, &alpha, (1, 1)).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                let a = alpha.get(x, y);
                let (o, s) = (obj.pixel(x, y), scene.pixel(x + 1, y + 1));
                let expect = [0, 1, 2].map(|c| {
                    let v = a * (o[c] as f64 / 255.0) + (1.0 - a) * (s[c] as f64 / 255.0);
                    (v * 255.0).round() as u8
                });
                assert_eq!(out.pixel(x + 1, y + 1), expect);
            }
        }
        assert!(matches!(composite_over(&scene, &obj, &alpha, (7, 0)), Err(Error::OutOfBounds)));
        assert!(matches!(composite_over(&scene, &obj, &alpha, (-1, 0)), Err(Error::OutOfBounds)));
    }
}
