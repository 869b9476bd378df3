//! Edge and body targets derived from a final border mask.

use crate::error::{Error, Result};
use crate::plane::Plane;

/// Canny detector settings. Thresholds are fractions of the largest gradient
/// magnitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyConfig {
    pub sigma: f64,
    pub ksize: usize,
    pub low: f64,
    pub high: f64,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            ksize: 5,
            low: 0.1,
            high: 0.3,
        }
    }
}

impl CannyConfig {
    pub fn validate(&self) -> Result<()> {
        validate_gaussian("canny_sigma", "canny_ksize", self.sigma, self.ksize)?;
        if !(0.0..=1.0).contains(&self.low) || !(0.0..=1.0).contains(&self.high) || self.low > self.high {
            return Err(Error::config(
                "canny_low",
                format!("thresholds ({}, {}) must satisfy 0 <= low <= high <= 1", self.low, self.high),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyConfig {
    pub sigma: f64,
    pub ksize: usize,
}

impl Default for BodyConfig {
    fn default() -> Self {
        Self { sigma: 2.0, ksize: 5 }
    }
}

impl BodyConfig {
    pub fn validate(&self) -> Result<()> {
        validate_gaussian("body_sigma", "body_ksize", self.sigma, self.ksize)
    }
}

fn validate_gaussian(sigma_field: &str, ksize_field: &str, sigma: f64, ksize: usize) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::config(sigma_field, format!("{sigma} is not a positive number")));
    }
    if ksize.is_multiple_of(2) {
        return Err(Error::config(ksize_field, format!("{ksize} is not odd")));
    }
    Ok(())
}

/// Normalized 1D Gaussian taps, `ksize` odd. The 2D kernel is the outer
/// product of this with itself.
pub fn gaussian_kernel(sigma: f64, ksize: usize) -> Vec<f64> {
    let r = (ksize / 2) as f64;
    let taps: Vec<f64> = (0..ksize)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable convolution with replicate padding.
fn blur(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * src[y * w + clamp(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[clamp(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

fn require_binary(mask: &Plane, op: &'static str) -> Result<()> {
    if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidTensor(format!("{op}: mask value {v} is not 0 or 1")));
    }
    Ok(())
}

/// Canny edges of a `{0,1}` mask, read as an 8-bit image (foreground 255).
///
/// On a magnitude tie during non-maximum suppression the brighter pixel
/// wins, so a filled region keeps its own outermost pixels.
pub fn derive_edge_mask(final_mask: &Plane, cfg: &CannyConfig) -> Result<Plane> {
    cfg.validate()?;
    require_binary(final_mask, "derive_edge_mask")?;
    let (h, w) = final_mask.dims();
    let intensity: Vec<f64> = final_mask.data().iter().map(|&v| v as f64 * 255.0).collect();
    let smooth = blur(&intensity, h, w, &gaussian_kernel(cfg.sigma, cfg.ksize));

    let at = |y: isize, x: isize| smooth[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    let mut mag = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            gy[i] = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            mag[i] = gx[i].hypot(gy[i]);
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Plane::filled(h, w, 0.0);
    }
    let tie = max * 1e-9;

    // Non-maximum suppression along the quantized gradient direction
    // (image rows grow downwards).
    let mut thin = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m <= tie {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (dy, dx) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let keeps = |sign: isize| {
                let ny = y as isize + sign * dy;
                let nx = x as isize + sign * dx;
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    return true;
                }
                let j = ny as usize * w + nx as usize;
                if (m - mag[j]).abs() <= tie {
                    intensity[i] >= intensity[j]
                } else {
                    m > mag[j]
                }
            };
            if keeps(1) && keeps(-1) {
                thin[i] = m;
            }
        }
    }

    // Double threshold and 8-connected hysteresis from the strong pixels.
    let (low, high) = (cfg.low * max, cfg.high * max);
    let mut out = vec![0.0f32; h * w];
    let mut stack: Vec<usize> = (0..h * w).filter(|&i| thin[i] >= high && thin[i] > 0.0).collect();
    for &i in &stack {
        out[i] = 1.0;
    }
    while let Some(i) = stack.pop() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && thin[j] >= low && thin[j] > 0.0 {
                    out[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    Plane::new(h, w, out)
}

/// `1 - final`, blurred with a normalized Gaussian under replicate padding.
pub fn derive_body_mask(final_mask: &Plane, cfg: &BodyConfig) -> Result<Plane> {
    cfg.validate()?;
    require_binary(final_mask, "derive_body_mask")?;
    let (h, w) = final_mask.dims();
    let inverted: Vec<f64> = final_mask.data().iter().map(|&v| 1.0 - v as f64).collect();
    let body = blur(&inverted, h, w, &gaussian_kernel(cfg.sigma, cfg.ksize));
    Plane::new(h, w, body.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
}

/// The three training targets for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskTriplet {
    pub final_mask: Plane,
    pub edge: Plane,
    pub body: Plane,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MaskConfig {
    pub canny: CannyConfig,
    pub body: BodyConfig,
}

impl MaskTriplet {
    pub fn derive(final_mask: &Plane, cfg: &MaskConfig) -> Result<Self> {
        Ok(Self {
            edge: derive_edge_mask(final_mask, &cfg.canny)?,
            body: derive_body_mask(final_mask, &cfg.body)?,
            final_mask: final_mask.clone(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.final_mask.dims()
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            final_mask: self.final_mask.crop(top, left, height, width)?,
            edge: self.edge.crop(top, left, height, width)?,
            body: self.body.crop(top, left, height, width)?,
        })
    }
}
