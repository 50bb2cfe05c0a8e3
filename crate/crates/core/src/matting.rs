//! Closed-form matting.
//!
//! Every `(2r+1)×(2r+1)` window `w` that fits in the image contributes
//!
//! ```text
//! L_ij += δ_ij − (1 + (I_i − μ)ᵀ (Σ + ε/|w|·Id)⁻¹ (I_j − μ)) / |w|
//! ```
//!
//! for each pixel pair in the window, with `μ`, `Σ` the window's color mean
//! and population covariance. Alpha minimizes `αᵀLα` subject to the trimap:
//! FG/BG pixels are eliminated and their terms moved to the right-hand side.
//!
//! An image thinner than the window along an axis uses the full image extent
//! along that axis, so a `1×n` strip is covered by `1×3` windows.

use crate::error::{Error, Result};
use crate::raster::{AlphaMap, RgbImage, Trimap, TrimapLabel};
use crate::solver::{cg_solve, CgOptions, CgReport, SparseMatrix, SparseSystem, TripletBuilder};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MattingParams {
    pub window_radius: usize,
    pub epsilon: f64,
    pub cg: CgOptions,
}

impl Default for MattingParams {
    fn default() -> Self {
        Self {
            window_radius: 1,
            epsilon: 1e-7,
            cg: CgOptions::default(),
        }
    }
}

impl MattingParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::InvalidArgument("matting window radius must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("matting epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.cg.tol > 0.0) {
            return Err(Error::InvalidArgument("solver tolerance must be positive".into()));
        }
        Ok(())
    }
}

type Mat3 = [[f64; 3]; 3];

/// Lower Cholesky factor of a symmetric positive definite 3×3 matrix.
fn cholesky3(m: &Mat3) -> Option<Mat3> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `L y = d` by forward substitution.
fn forward3(l: &Mat3, d: &[f64; 3]) -> [f64; 3] {
    let y0 = d[0] / l[0][0];
    let y1 = (d[1] - l[1][0] * y0) / l[1][1];
    let y2 = (d[2] - l[2][0] * y0 - l[2][1] * y1) / l[2][2];
    [y0, y1, y2]
}

/// Local-model quantities for one window.
///
/// With `Σ + ε/|w|·Id = L Lᵀ`, the quadratic term `(I_i − μ)ᵀ(Σ + ε/|w|·Id)⁻¹(I_j − μ)`
/// equals `y_i · y_j` where `y = L⁻¹(I − μ)`. The Cholesky route stays accurate
/// when the covariance is nearly singular, e.g. windows straddling two flat colors.
struct Window {
    pixels: Vec<usize>,
    whitened: Vec<[f64; 3]>,
    size: f64,
}

impl Window {
    /// The pair term `δ_ij − (1 + y_i · y_j)/|w|` for window-local `a`, `b`.
    fn entry(&self, a: usize, b: usize) -> f64 {
        let (ya, yb) = (&self.whitened[a], &self.whitened[b]);
        let q = ya[0] * yb[0] + ya[1] * yb[1] + ya[2] * yb[2];
        let delta = if a == b { 1.0 } else { 0.0 };
        delta - (1.0 + q) / self.size
    }
}

struct WindowGrid {
    width: usize,
    win_w: usize,
    win_h: usize,
    nx: usize,
    ny: usize,
}

impl WindowGrid {
    fn new(width: usize, height: usize, radius: usize) -> Self {
        let win_w = (2 * radius + 1).min(width);
        let win_h = (2 * radius + 1).min(height);
        Self {
            width,
            win_w,
            win_h,
            nx: width - win_w + 1,
            ny: height - win_h + 1,
        }
    }

    fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ny).flat_map(move |y| (0..self.nx).map(move |x| (x, y)))
    }

    fn pixels(&self, x0: usize, y0: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.win_w * self.win_h);
        for y in y0..y0 + self.win_h {
            for x in x0..x0 + self.win_w {
                out.push(y * self.width + x);
            }
        }
        out
    }
}

fn window_model(colors: &[[f64; 3]], pixels: Vec<usize>, epsilon: f64) -> Result<Window> {
    let size = pixels.len() as f64;
    let mut mean = [0.0; 3];
    for &p in &pixels {
        for c in 0..3 {
            mean[c] += colors[p][c];
        }
    }
    for m in &mut mean {
        *m /= size;
    }
    let centered: Vec<[f64; 3]> = pixels
        .iter()
        .map(|&p| [colors[p][0] - mean[0], colors[p][1] - mean[1], colors[p][2] - mean[2]])
        .collect();
    let mut cov = [[0.0; 3]; 3];
    for d in &centered {
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    for (r, row) in cov.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= size;
        }
        row[r] += epsilon / size;
    }
    let factor = cholesky3(&cov).ok_or_else(|| Error::InvalidArgument("window covariance is not positive definite".into()))?;
    let whitened = centered.iter().map(|d| forward3(&factor, d)).collect();
    Ok(Window { pixels, whitened, size })
}

fn pixel_colors(image: &RgbImage) -> Vec<[f64; 3]> {
    (0..image.height())
        .flat_map(|y| (0..image.width()).map(move |x| (x, y)))
        .map(|(x, y)| image.pixel_f64(x, y))
        .collect()
}

/// The unreduced Laplacian over every pixel (row-major indexing).
pub fn matting_laplacian_full(image: &RgbImage, params: &MattingParams) -> Result<SparseMatrix> {
    params.validate()?;
    let colors = pixel_colors(image);
    let grid = WindowGrid::new(image.width(), image.height(), params.window_radius);
    let per = grid.win_w * grid.win_h;
    let mut builder = TripletBuilder::with_capacity(colors.len(), grid.nx * grid.ny * per * per);
    for (x0, y0) in grid.positions() {
        let win = window_model(&colors, grid.pixels(x0, y0), params.epsilon)?;
        for a in 0..win.pixels.len() {
            for b in a..win.pixels.len() {
                builder.add_symmetric(win.pixels[a], win.pixels[b], win.entry(a, b));
            }
        }
    }
    builder.finish()
}

/// Laplacian restricted to the UNKNOWN pixels, with the FG constraint terms
/// (alpha fixed to 1) moved to the right-hand side.
#[derive(Clone, Debug)]
pub struct MattingSystem {
    pub system: SparseSystem,
    /// Row-major pixel index of each unknown, in system order.
    pub unknown: Vec<usize>,
}

pub fn matting_laplacian(image: &RgbImage, trimap: &Trimap, params: &MattingParams) -> Result<MattingSystem> {
    params.validate()?;
    if image.dims() != trimap.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            actual: trimap.dims(),
        });
    }
    let labels = trimap.as_slice();
    let mut slot = vec![usize::MAX; labels.len()];
    let mut unknown = Vec::new();
    for (p, &l) in labels.iter().enumerate() {
        if l == TrimapLabel::Unknown {
            slot[p] = unknown.len();
            unknown.push(p);
        }
    }
    if unknown.is_empty() {
        return Err(Error::NoUnknownPixels);
    }
    let colors = pixel_colors(image);
    let grid = WindowGrid::new(image.width(), image.height(), params.window_radius);
    let mut builder = TripletBuilder::new(unknown.len());
    let mut rhs = vec![0.0; unknown.len()];
    for (x0, y0) in grid.positions() {
        let pixels = grid.pixels(x0, y0);
        if !pixels.iter().any(|&p| slot[p] != usize::MAX) {
            continue;
        }
        let win = window_model(&colors, pixels, params.epsilon)?;
        for a in 0..win.pixels.len() {
            for b in a..win.pixels.len() {
                let (pa, pb) = (win.pixels[a], win.pixels[b]);
                let (ua, ub) = (slot[pa], slot[pb]);
                match (ua != usize::MAX, ub != usize::MAX) {
                    (true, true) => builder.add_symmetric(ua, ub, win.entry(a, b)),
                    (true, false) if labels[pb] == TrimapLabel::Foreground => rhs[ua] -= win.entry(a, b),
                    (false, true) if labels[pa] == TrimapLabel::Foreground => rhs[ub] -= win.entry(a, b),
                    _ => {}
                }
            }
        }
    }
    let system = SparseSystem::new(builder.finish()?, vec![rhs])?;
    Ok(MattingSystem { system, unknown })
}

#[derive(Clone, Debug)]
pub struct MattingOutcome {
    pub alpha: AlphaMap,
    /// Largest distance of the raw solution outside `[0, 1]` before clamping.
    pub overshoot: f64,
    pub report: Option<CgReport>,
}

pub fn solve_alpha(image: &RgbImage, trimap: &Trimap, params: &MattingParams) -> Result<AlphaMap> {
    solve_alpha_detailed(image, trimap, params).map(|o| o.alpha)
}

/// FG pixels get exactly 1, BG exactly 0, UNKNOWN the clamped CG solution.
/// An empty UNKNOWN set returns the FG indicator.
pub fn solve_alpha_detailed(image: &RgbImage, trimap: &Trimap, params: &MattingParams) -> Result<MattingOutcome> {
    let fg = AlphaMap::from_mask(&trimap.mask_of(TrimapLabel::Foreground));
    let ms = match matting_laplacian(image, trimap, params) {
        Ok(ms) => ms,
        Err(Error::NoUnknownPixels) => {
            return Ok(MattingOutcome { alpha: fg, overshoot: 0.0, report: None });
        }
        Err(e) => return Err(e),
    };
    let solution = cg_solve(&ms.system, &params.cg)?;
    let mut data = fg.as_slice().to_vec();
    let mut overshoot: f64 = 0.0;
    for (&p, &v) in ms.unknown.iter().zip(&solution.x[0]) {
        overshoot = overshoot.max(v - 1.0).max(-v);
        data[p] = v.clamp(0.0, 1.0);
    }
    Ok(MattingOutcome {
        alpha: AlphaMap::new(image.width(), image.height(), data)?,
        overshoot,
        report: Some(solution.reports[0]),
    })
}
