//! Prediction/ground-truth overlays on the grayscale image.

use image::{Rgb, RgbImage};
use mbtnet::plane::Plane;

pub const PREDICTION_ONLY: Rgb<u8> = Rgb([255, 0, 0]);
pub const TRUTH_ONLY: Rgb<u8> = Rgb([0, 255, 0]);
pub const OVERLAP: Rgb<u8> = Rgb([255, 165, 0]);

/// Colors prediction-only pixels red, truth-only green and overlap orange;
/// everything else shows the image.
pub fn overlay(image: &Plane, pred: &[bool], truth: &[bool]) -> RgbImage {
    let (h, w) = image.dims();
    assert_eq!(pred.len(), h * w);
    assert_eq!(truth.len(), h * w);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        match (pred[i], truth[i]) {
            (true, true) => OVERLAP,
            (true, false) => PREDICTION_ONLY,
            (false, true) => TRUTH_ONLY,
            (false, false) => {
                let v = (image.data()[i].clamp(0.0, 1.0) * 255.0).round() as u8;
                Rgb([v, v, v])
            }
        }
    })
}
