//! Procedural cell mosaics: jittered Voronoi tessellations with dark
//! borders, shading, uneven illumination, noise and a blurred region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::plane::Plane;
use crate::supervision::gaussian_kernel;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Approximate number of cells; seeds sit on a row-offset grid.
    pub cells: usize,
    /// Seed displacement as a fraction of the grid spacing, in `[0, 1]`.
    pub jitter: f64,
    pub border_width: f64,
    pub base_min: f64,
    pub base_max: f64,
    /// Brightness at a border relative to the cell interior.
    pub border_darkness: f64,
    /// Width of the dark falloff next to a border, in pixels.
    pub shading: f64,
    /// Peak relative change of the linear illumination ramp.
    pub illumination: f64,
    pub noise: f64,
    /// Fraction of the image area covered by the blurred region.
    pub fuzzy_fraction: f64,
    pub fuzzy_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            cells: 40,
            jitter: 0.35,
            border_width: 2.0,
            base_min: 0.45,
            base_max: 0.8,
            border_darkness: 0.3,
            shading: 1.5,
            illumination: 0.25,
            noise: 0.04,
            fuzzy_fraction: 0.15,
            fuzzy_sigma: 1.5,
            seed: 0,
        }
    }
}

pub const SYNTH_KEYS: &[&str] = &[
    "height",
    "width",
    "cells",
    "jitter",
    "border_width",
    "base_min",
    "base_max",
    "border_darkness",
    "shading",
    "illumination",
    "noise",
    "fuzzy_fraction",
    "fuzzy_sigma",
    "seed",
];

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("height", "image extents must be positive"));
        }
        if self.cells < 4 {
            return Err(Error::config("cells", format!("{} is below the minimum of 4", self.cells)));
        }
        if self.border_width.is_nan() || self.border_width < 1.0 {
            return Err(Error::config("border_width", format!("{} is below 1", self.border_width)));
        }
        let unit = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(field, format!("{v} is outside [0, 1]")))
            }
        };
        unit("jitter", self.jitter)?;
        unit("fuzzy_fraction", self.fuzzy_fraction)?;
        unit("border_darkness", self.border_darkness)?;
        unit("base_min", self.base_min)?;
        unit("base_max", self.base_max)?;
        if self.base_min > self.base_max {
            return Err(Error::config("base_min", "exceeds base_max"));
        }
        for (field, v) in [
            ("shading", self.shading),
            ("illumination", self.illumination),
            ("noise", self.noise),
            ("fuzzy_sigma", self.fuzzy_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, format!("{v} is not a non-negative number")));
            }
        }
        let spacing = ((self.height * self.width) as f64 / self.cells as f64).sqrt();
        if spacing < 3.0 * self.border_width {
            return Err(Error::config(
                "cells",
                format!(
                    "{} cells leave {spacing:.1} px per cell, too small for {} px borders",
                    self.cells, self.border_width
                ),
            ));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvFile {
        KvFile::from_pairs([
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("cells", self.cells.to_string()),
            ("jitter", self.jitter.to_string()),
            ("border_width", self.border_width.to_string()),
            ("base_min", self.base_min.to_string()),
            ("base_max", self.base_max.to_string()),
            ("border_darkness", self.border_darkness.to_string()),
            ("shading", self.shading.to_string()),
            ("illumination", self.illumination.to_string()),
            ("noise", self.noise.to_string()),
            ("fuzzy_fraction", self.fuzzy_fraction.to_string()),
            ("fuzzy_sigma", self.fuzzy_sigma.to_string()),
            ("seed", self.seed.to_string()),
        ])
    }

    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<()> {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = kv.value(stringify!($field))? {
                    self.$field = v;
                })*
            };
        }
        take!(
            height,
            width,
            cells,
            jitter,
            border_width,
            base_min,
            base_max,
            border_darkness,
            shading,
            illumination,
            noise,
            fuzzy_fraction,
            fuzzy_sigma,
            seed
        );
        Ok(())
    }
}

/// A seed point in pixel coordinates `(y, x)`.
pub type Site = (f64, f64);

/// Distance from `p` to the bisector between its nearest and second nearest
/// sites, with the index of the nearest.
fn boundary_distance(sites: &[Site], p: Site) -> (usize, f64) {
    let d2 = |s: &Site| (s.0 - p.0).powi(2) + (s.1 - p.1).powi(2);
    let (mut a, mut b) = (0, 1);
    if d2(&sites[b]) < d2(&sites[a]) {
        std::mem::swap(&mut a, &mut b);
    }
    for i in 2..sites.len() {
        let d = d2(&sites[i]);
        if d < d2(&sites[a]) {
            b = a;
            a = i;
        } else if d < d2(&sites[b]) {
            b = i;
        }
    }
    let (sa, sb) = (sites[a], sites[b]);
    let sep = ((sa.0 - sb.0).powi(2) + (sa.1 - sb.1).powi(2)).sqrt();
    let dist = if sep == 0.0 { 0.0 } else { (d2(&sb) - d2(&sa)) / (2.0 * sep) };
    (a, dist)
}

/// Border mask of the Voronoi diagram of `sites`: a pixel is foreground when
/// it lies within `border_width / 2` of the bisector between its two nearest
/// sites.
pub fn voronoi_border_mask(sites: &[Site], height: usize, width: usize, border_width: f64) -> Result<Plane> {
    if sites.len() < 2 {
        return Err(Error::config("cells", "at least two sites are required"));
    }
    Plane::from_fn(height, width, |y, x| {
        let (_, d) = boundary_distance(sites, (y as f64, x as f64));
        (d <= border_width / 2.0) as u8 as f32
    })
}

/// Row-offset grid of sites with uniform jitter.
pub fn jittered_sites(cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<Site> {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let rows = ((cfg.cells as f64 * h / w).sqrt().round() as usize).max(2);
    let cols = cfg.cells.div_ceil(rows).max(2);
    let (dy, dx) = (h / rows as f64, w / cols as f64);
    let mut sites = Vec::with_capacity(rows * (cols + 1));
    for r in 0..rows {
        let offset = if r % 2 == 1 { 0.5 } else { 0.0 };
        let n = if r % 2 == 1 { cols + 1 } else { cols };
        for c in 0..n {
            let jy = rng.random_range(-0.5..0.5) * cfg.jitter * dy;
            let jx = rng.random_range(-0.5..0.5) * cfg.jitter * dx;
            let y = (r as f64 + 0.5) * dy + jy - 0.5;
            let x = (c as f64 + 0.5 - offset) * dx + jx - 0.5;
            sites.push((y, x));
        }
    }
    sites
}

fn blur_region(img: &mut [f64], h: usize, w: usize, rect: (usize, usize, usize, usize), sigma: f64) {
    let ksize = 2 * (3.0 * sigma).ceil() as usize + 1;
    let taps = gaussian_kernel(sigma, ksize);
    let r = (ksize / 2) as isize;
    let src = img.to_vec();
    let (top, left, rh, rw) = rect;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = src.clone();
    for y in 0..h {
        for x in left..left + rw {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * src[y * w + clamp(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    for y in top..top + rh {
        for x in left..left + rw {
            img[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[clamp(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    }
}

/// Generates an 8-bit-quantized image in `[0, 1]` and its border mask.
pub fn generate_voronoi_mosaic(cfg: &SynthConfig) -> Result<(Plane, Plane)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sites = jittered_sites(cfg, &mut rng);
    let brightness: Vec<f64> = sites
        .iter()
        .map(|_| rng.random_range(cfg.base_min..=cfg.base_max))
        .collect();
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (h, w) = (cfg.height, cfg.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let reach = cy.hypot(cx).max(1.0);

    let mut mask = vec![0.0f32; h * w];
    let mut img = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let (cell, d) = boundary_distance(&sites, (y as f64, x as f64));
            let i = y * w + x;
            mask[i] = (d <= cfg.border_width / 2.0) as u8 as f32;
            let falloff = if cfg.shading > 0.0 {
                1.0 - (-(d * d) / (2.0 * cfg.shading * cfg.shading)).exp()
            } else {
                1.0
            };
            let shade = cfg.border_darkness + (1.0 - cfg.border_darkness) * falloff;
            let ramp = ((y as f64 - cy) * angle.sin() + (x as f64 - cx) * angle.cos()) / reach;
            img[i] = brightness[cell] * shade * (1.0 + cfg.illumination * ramp);
        }
    }
    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise).map_err(|e| Error::config("noise", e.to_string()))?;
        for v in &mut img {
            *v += normal.sample(&mut rng);
        }
    }
    if cfg.fuzzy_fraction > 0.0 && cfg.fuzzy_sigma > 0.0 {
        let area = cfg.fuzzy_fraction * (h * w) as f64;
        let aspect = rng.random_range(0.5..2.0);
        let rh = ((area * aspect).sqrt().round() as usize).clamp(1, h);
        let rw = ((area / rh as f64).round() as usize).clamp(1, w);
        let top = rng.random_range(0..=h - rh);
        let left = rng.random_range(0..=w - rw);
        blur_region(&mut img, h, w, (top, left, rh, rw), cfg.fuzzy_sigma);
    }
    let image = Plane::new(
        h,
        w,
        img.into_iter()
            .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32)
            .collect(),
    )?;
    Ok((image, Plane::new(h, w, mask)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        SynthConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_degenerate_configs() {
        let few = SynthConfig { cells: 3, ..Default::default() };
        assert!(few.validate().is_err());
        let crowded = SynthConfig { cells: 5000, ..Default::default() };
        let err = crowded.validate().unwrap_err().to_string();
        assert!(err.contains("cells"), "{err}");
        let fuzzy = SynthConfig { fuzzy_fraction: 1.5, ..Default::default() };
        assert!(fuzzy.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let cfg = SynthConfig { cells: 17, noise: 0.125, seed: 9, ..Default::default() };
        let mut back = SynthConfig::default();
        back.apply_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn site_count_tracks_cells() {
        let cfg = SynthConfig::default();
        let sites = jittered_sites(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(sites.len() >= cfg.cells && sites.len() <= cfg.cells * 3 / 2, "{}", sites.len());
    }
}
