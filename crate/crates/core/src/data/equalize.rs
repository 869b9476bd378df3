use image::GrayImage;

/// Global 256-bin histogram equalization: `v -> round(255 * cdf(v))`, where
/// `cdf(v)` is the fraction of pixels with intensity at most `v`.
pub fn histogram_equalize(img: &GrayImage) -> GrayImage {
    let mut hist = [0u64; 256];
    for p in img.pixels() {
        hist[p[0] as usize] += 1;
    }
    let n = img.pixels().len().max(1) as f64;
    let mut lut = [0u8; 256];
    let mut acc = 0u64;
    for (v, &count) in hist.iter().enumerate() {
        acc += count;
        lut[v] = (255.0 * acc as f64 / n).round() as u8;
    }
    let mut out = img.clone();
    for p in out.pixels_mut() {
        p[0] = lut[p[0] as usize];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let img = GrayImage::from_pixel(4, 3, image::Luma([77]));
        let eq = histogram_equalize(&img);
        let first = eq.get_pixel(0, 0)[0];
        assert!(eq.pixels().all(|p| p[0] == first));
    }

    #[test]
    fn two_levels_map_to_cdf_positions() {
        let img = GrayImage::from_fn(4, 1, |x, _| image::Luma([if x == 0 { 10 } else { 200 }]));
        let eq = histogram_equalize(&img);
        assert_eq!(eq.get_pixel(0, 0)[0], (0.25f64 * 255.0).round() as u8);
        assert_eq!(eq.get_pixel(1, 0)[0], 255);
    }
}
