//! Pixel containers, binary morphology and trimap construction.
//!
//! All rasters are row-major. Pixel `(x, y)` is column `x`, row `y`, and its
//! center sits at the integer coordinate `(x, y)`; every module shares this
//! convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit sRGB image. Math is done on `v / 255` without gamma linearization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "rgb buffer holds {} bytes, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixel as unit-interval reals.
    pub fn pixel_f64(&self, x: usize, y: usize) -> [f64; 3] {
        let [r, g, b] = self.pixel(x, y);
        [to_unit(r), to_unit(g), to_unit(b)]
    }

    /// One channel as a row-major plane of unit-interval reals.
    pub fn channel_f64(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).map(|&v| to_unit(v)).collect()
    }

    /// Build from three unit-interval planes; values are clamped then quantized.
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f64>; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let n = width * height;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::InvalidArgument("plane length does not match dimensions".into()));
        }
        let mut data = Vec::with_capacity(n * 3);
        for i in 0..n {
            for plane in planes {
                data.push(quantize(plane[i]));
            }
        }
        Ok(Self { width, height, data })
    }

    /// Bilinear resample to `new_w × new_h`; output pixel `(x, y)` samples the
    /// source at `(x / sx, y / sy)` with `sx = new_w / w`, clamped to the source.
    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Result<Self> {
        check_dims(new_w, new_h)?;
        let scale = (new_w as f64 / self.width as f64, new_h as f64 / self.height as f64);
        self.resample(new_w, new_h, scale)
    }

    /// Uniform bilinear scaling: output is `round(w·s) × round(h·s)` (at least
    /// 1×1) and pixel `(x, y)` samples the source at exactly `(x / s, y / s)`.
    pub fn scale_bilinear(&self, scale: f64) -> Result<Self> {
        let (w, h) = scaled_dims(self.width, self.height, scale)?;
        self.resample(w, h, (scale, scale))
    }

    fn resample(&self, new_w: usize, new_h: usize, scale: (f64, f64)) -> Result<Self> {
        let planes = [0, 1, 2].map(|c| {
            resample_plane(&self.channel_f64(c), (self.width, self.height), (new_w, new_h), scale)
        });
        Self::from_planes(new_w, new_h, &planes)
    }
}

/// Dimensions of a `w × h` raster scaled by `scale`, rounded, at least 1×1.
pub fn scaled_dims(width: usize, height: usize, scale: f64) -> Result<(usize, usize)> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let w = ((width as f64 * scale).round() as usize).max(1);
    let h = ((height as f64 * scale).round() as usize).max(1);
    Ok((w, h))
}

/// Per-pixel boolean foreground flag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "mask buffer holds {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-image coordinates read as background.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return false;
        }
        self.data[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| !v).collect(),
        }
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Intersection over union; two empty masks have IoU 1.
    pub fn iou(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims(), "iou of masks with different dimensions");
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Per-pixel opacity in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl AlphaMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidArgument("alpha buffer length does not match dimensions".into()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("alpha value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            data: mask.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn threshold(&self, t: f64) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&a| a > t).collect(),
        }
    }

    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Result<Self> {
        check_dims(new_w, new_h)?;
        let scale = (new_w as f64 / self.width as f64, new_h as f64 / self.height as f64);
        self.resample(new_w, new_h, scale)
    }

    /// Same sampling grid as [`RgbImage::scale_bilinear`].
    pub fn scale_bilinear(&self, scale: f64) -> Result<Self> {
        let (w, h) = scaled_dims(self.width, self.height, scale)?;
        self.resample(w, h, (scale, scale))
    }

    fn resample(&self, new_w: usize, new_h: usize, scale: (f64, f64)) -> Result<Self> {
        let data = resample_plane(&self.data, (self.width, self.height), (new_w, new_h), scale)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        Ok(Self { width: new_w, height: new_h, data })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrimapLabel {
    Background,
    Unknown,
    Foreground,
}

impl TrimapLabel {
    /// Single-channel PNG encoding.
    pub fn to_byte(self) -> u8 {
        match self {
            TrimapLabel::Background => 0,
            TrimapLabel::Unknown => 128,
            TrimapLabel::Foreground => 255,
        }
    }

    /// Inverse of [`to_byte`](Self::to_byte); other values snap to the nearest level.
    pub fn from_byte(v: u8) -> Self {
        match v {
            0..=63 => TrimapLabel::Background,
            64..=191 => TrimapLabel::Unknown,
            _ => TrimapLabel::Foreground,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trimap {
    width: usize,
    height: usize,
    data: Vec<TrimapLabel>,
}

impl Trimap {
    pub fn new(width: usize, height: usize, data: Vec<TrimapLabel>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidArgument("trimap buffer length does not match dimensions".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[TrimapLabel] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> TrimapLabel {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: TrimapLabel) {
        self.data[y * self.width + x] = label;
    }

    pub fn mask_of(&self, label: TrimapLabel) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&l| l == label).collect(),
        }
    }

    pub fn count(&self, label: TrimapLabel) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementShape {
    Disc,
    Square,
}

impl std::str::FromStr for ElementShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disc" => Ok(ElementShape::Disc),
            "square" => Ok(ElementShape::Square),
            other => Err(Error::InvalidArgument(format!("unknown element shape {other:?}"))),
        }
    }
}

impl std::fmt::Display for ElementShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ElementShape::Disc => "disc",
            ElementShape::Square => "square",
        })
    }
}

/// Symmetric structuring element; radius 0 is the identity element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StructuringElement {
    pub shape: ElementShape,
    pub radius: usize,
}

impl StructuringElement {
    pub const fn square(radius: usize) -> Self {
        Self { shape: ElementShape::Square, radius }
    }

    pub const fn disc(radius: usize) -> Self {
        Self { shape: ElementShape::Disc, radius }
    }

    /// Offsets covered by the element. A disc keeps `(dx, dy)` with `dx² + dy² ≤ r²`.
    pub fn offsets(&self) -> Vec<(i64, i64)> {
        let r = self.radius as i64;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let keep = match self.shape {
                    ElementShape::Square => true,
                    ElementShape::Disc => dx * dx + dy * dy <= r * r,
                };
                if keep {
                    out.push((dx, dy));
                }
            }
        }
        out
    }
}

/// Default trimap element: square, radius 3.
pub const DEFAULT_TRIMAP_ELEMENT: StructuringElement = StructuringElement::square(3);

/// Erosion with the element clipped at the image border: a pixel stays
/// foreground iff every in-image pixel under the element is foreground.
pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    sweep(mask, se, true)
}

/// Dilation with the element clipped at the image border.
pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    sweep(mask, se, false)
}

// Elements are point-symmetric, so the reflected element equals the element.
fn sweep(mask: &BinaryMask, se: &StructuringElement, all: bool) -> BinaryMask {
    if se.radius == 0 {
        return mask.clone();
    }
    let offsets = se.offsets();
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut data = Vec::with_capacity(mask.data.len());
    for y in 0..h {
        for x in 0..w {
            let mut inside = offsets.iter().filter_map(|&(dx, dy)| {
                let (sx, sy) = (x + dx, y + dy);
                (sx >= 0 && sy >= 0 && sx < w && sy < h).then(|| mask.data[(sy * w + sx) as usize])
            });
            let v = if all { inside.all(|v| v) } else { inside.any(|v| v) };
            data.push(v);
        }
    }
    BinaryMask { width: mask.width, height: mask.height, data }
}

/// FG = eroded mask, BG = complement of the dilated mask, UNKNOWN = the rest.
/// An empty FG set is allowed; callers decide whether that is acceptable.
pub fn make_trimap(mask: &BinaryMask, erode_se: &StructuringElement, dilate_se: &StructuringElement) -> Result<Trimap> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let fg = erode(mask, erode_se);
    let grown = dilate(mask, dilate_se);
    let data = fg
        .data
        .iter()
        .zip(&grown.data)
        .map(|(&f, &g)| match (f, g) {
            (true, _) => TrimapLabel::Foreground,
            (false, false) => TrimapLabel::Background,
            (false, true) => TrimapLabel::Unknown,
        })
        .collect();
    Ok(Trimap { width: mask.width, height: mask.height, data })
}

pub fn to_unit(v: u8) -> f64 {
    v as f64 / 255.0
}

/// Clamp to `[0, 1]` and round half away from zero to 8 bits.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("image dimensions must be positive, got {width}x{height}")));
    }
    Ok(())
}

fn resample_plane(src: &[f64], (w, h): (usize, usize), (new_w, new_h): (usize, usize), (sx, sy): (f64, f64)) -> Vec<f64> {
    let mut out = Vec::with_capacity(new_w * new_h);
    for y in 0..new_h {
        let fy = (y as f64 / sy).min((h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..new_w {
            let fx = (x as f64 / sx).min((w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bottom = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}
