//! 8-bit grayscale PNG storage for images and masks.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::plane::Plane;

/// Quantizes `[0, 1]` values to `0..=255`.
pub fn to_gray(plane: &Plane) -> GrayImage {
    let (h, w) = plane.dims();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(plane.get(y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

pub fn from_gray(img: &GrayImage) -> Result<Plane> {
    let (w, h) = img.dimensions();
    Plane::from_fn(h as usize, w as usize, |y, x| img.get_pixel(x as u32, y as u32)[0] as f32 / 255.0)
}

pub fn save_png(plane: &Plane, path: &Path) -> Result<()> {
    to_gray(plane).save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

pub fn encode_png(plane: &Plane) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    to_gray(plane).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Decodes any PNG and converts it to 8-bit luma scaled to `[0, 1]`.
pub fn decode_png(bytes: &[u8]) -> Result<Plane> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    from_gray(&img.to_luma8())
}

pub fn load_png(path: &Path) -> Result<Plane> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_png(&std::fs::read(path)?)
}

/// Decodes a PNG mask and binarizes it at mid-gray.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Plane> {
    Ok(decode_png(bytes)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }))
}

pub fn load_mask_png(path: &Path) -> Result<Plane> {
    Ok(load_png(path)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }))
}
