//! PNG/JPEG reading and writing for the raster types.
//!
//! Masks are single-channel 0/255, alpha mattes single-channel 16-bit,
//! trimaps single-channel with BG=0, UNKNOWN=128, FG=255.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::raster::{AlphaMap, BinaryMask, RgbImage, Trimap, TrimapLabel};

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let bytes = fs::read(path)?;
    decode_bytes(&bytes, path)
}

pub(crate) fn decode_bytes(bytes: &[u8], path: &Path) -> Result<image::DynamicImage> {
    image::load_from_memory(bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = decode(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    RgbImage::new(w, h, img.into_raw())
}

pub fn rgb_from_bytes(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let img = decode_bytes(bytes, path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    RgbImage::new(w, h, img.into_raw())
}

/// Any decodable image; luma above 127 is foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = decode(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryMask::new(w, h, img.into_raw().into_iter().map(|v| v > 127).collect())
}

/// 8-bit or 16-bit single-channel images are both accepted.
pub fn load_alpha(path: &Path) -> Result<AlphaMap> {
    let img = decode(path)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    AlphaMap::new(w, h, img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
}

pub fn load_trimap(path: &Path) -> Result<Trimap> {
    let img = decode(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Trimap::new(w, h, img.into_raw().into_iter().map(TrimapLabel::from_byte).collect())
}

pub fn encode_png(width: usize, height: usize, bytes: &[u8], color: ExtendedColorType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out)
}

pub fn rgb_png_bytes(img: &RgbImage) -> Result<Vec<u8>> {
    encode_png(img.width(), img.height(), img.as_bytes(), ExtendedColorType::Rgb8)
}

pub fn mask_png_bytes(mask: &BinaryMask) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = mask.as_slice().iter().map(|&v| if v { 255 } else { 0 }).collect();
    encode_png(mask.width(), mask.height(), &bytes, ExtendedColorType::L8)
}

/// Alpha quantized to 16 bits. The encoder takes native-endian samples.
pub fn alpha_png_bytes(alpha: &AlphaMap) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = alpha
        .as_slice()
        .iter()
        .flat_map(|&a| (((a.clamp(0.0, 1.0)) * 65535.0).round() as u16).to_ne_bytes())
        .collect();
    encode_png(alpha.width(), alpha.height(), &bytes, ExtendedColorType::L16)
}

pub fn trimap_png_bytes(trimap: &Trimap) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = trimap.as_slice().iter().map(|l| l.to_byte()).collect();
    encode_png(trimap.width(), trimap.height(), &bytes, ExtendedColorType::L8)
}

pub fn jpeg_bytes(img: &RgbImage, quality: u8) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    JpegEncoder::new_with_quality(&mut out, quality)
        .write_image(img.as_bytes(), img.width() as u32, img.height() as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn save_rgb_png(img: &RgbImage, path: &Path) -> Result<()> {
    write_atomic(path, &rgb_png_bytes(img)?)
}

pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    write_atomic(path, &mask_png_bytes(mask)?)
}

pub fn save_alpha(alpha: &AlphaMap, path: &Path) -> Result<()> {
    write_atomic(path, &alpha_png_bytes(alpha)?)
}

pub fn save_trimap(trimap: &Trimap, path: &Path) -> Result<()> {
    write_atomic(path, &trimap_png_bytes(trimap)?)
}

/// Write to a sibling temp file, then rename over the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
