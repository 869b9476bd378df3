mod common;

use std::path::Path;

use common::rng;
use image::{GrayImage, Luma};
use mbtnet::data::{
    extract_patches, generate_voronoi_mosaic, histogram_equalize, load_split, patch_corners, synthesize_dataset,
    voronoi_border_mask, DatasetManifest, DatasetSpec, ManifestRecord, Split, SynthConfig,
};
use mbtnet::plane::Plane;
use mbtnet::supervision::MaskConfig;
use mbtnet::Error;
use proptest::prelude::*;
use rand::Rng;

/// Per-pixel oracle: sort all sites by distance, take the two nearest and
/// measure the distance to their perpendicular bisector.
fn border_oracle(sites: &[(f64, f64)], h: usize, w: usize, bw: f64) -> Vec<bool> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut d: Vec<(f64, usize)> = sites
                .iter()
                .enumerate()
                .map(|(i, s)| ((s.0 - y as f64).hypot(s.1 - x as f64), i))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (a, b) = (sites[d[0].1], sites[d[1].1]);
            // Project p - midpoint onto the unit vector from a to b.
            let (my, mx) = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
            let (uy, ux) = (b.0 - a.0, b.1 - a.1);
            let len = uy.hypot(ux);
            let dist = ((y as f64 - my) * uy + (x as f64 - mx) * ux).abs() / len;
            out.push(dist <= bw / 2.0);
        }
    }
    out
}

#[test]
fn corner_sites_give_a_cross() {
    let n = 16;
    let m = (n - 1) as f64;
    let sites = [(0.0, 0.0), (0.0, m), (m, 0.0), (m, m)];
    let mask = voronoi_border_mask(&sites, n, n, 2.0).unwrap();
    assert_eq!(mask.to_binary(), border_oracle(&sites, n, n, 2.0));
    for y in 0..n {
        for x in 0..n {
            let on_cross = y == 7 || y == 8 || x == 7 || x == 8;
            assert_eq!(mask.get(y, x) > 0.5, on_cross, "({y}, {x})");
        }
    }
}

#[test]
fn random_sites_match_oracle() {
    let mut r = rng(4);
    for _ in 0..10 {
        let sites: Vec<(f64, f64)> = (0..7)
            .map(|_| (r.random_range(0.0..20.0), r.random_range(0.0..24.0)))
            .collect();
        let mask = voronoi_border_mask(&sites, 20, 24, 2.0).unwrap();
        assert_eq!(mask.to_binary(), border_oracle(&sites, 20, 24, 2.0));
    }
}

#[test]
fn mosaic_is_deterministic() {
    let cfg = SynthConfig { seed: 3, ..Default::default() };
    let a = generate_voronoi_mosaic(&cfg).unwrap();
    let b = generate_voronoi_mosaic(&cfg).unwrap();
    assert_eq!(a, b);
    let c = generate_voronoi_mosaic(&SynthConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn borders_are_thin() {
    for seed in 0..5 {
        let (_, mask) = generate_voronoi_mosaic(&SynthConfig { seed, ..Default::default() }).unwrap();
        let frac = mask.count_foreground() as f64 / mask.data().len() as f64;
        assert!(frac > 0.05 && frac < 0.25, "seed {seed}: {frac}");
    }
}

#[test]
fn noiseless_cells_are_smooth() {
    let base = SynthConfig::default();
    let cfg = SynthConfig {
        noise: 0.0,
        fuzzy_fraction: 0.0,
        illumination: 0.0,
        seed: 8,
        ..base.clone()
    };
    let (image, mask) = generate_voronoi_mosaic(&cfg).unwrap();
    // Interior pixels: at least 4 px from any border pixel.
    let far = |y: usize, x: usize| {
        (y.saturating_sub(4)..(y + 5).min(image.height()))
            .all(|yy| (x.saturating_sub(4)..(x + 5).min(image.width())).all(|xx| mask.get(yy, xx) < 0.5))
    };
    let mut groups: std::collections::BTreeMap<u32, Vec<f64>> = Default::default();
    // Flood-fill labels of non-border regions.
    let (h, w) = image.dims();
    let mut label = vec![u32::MAX; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if label[start] != u32::MAX || mask.data()[start] > 0.5 {
            continue;
        }
        let mut stack = vec![start];
        label[start] = next;
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            for (ny, nx) in [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)] {
                if ny < h && nx < w {
                    let j = ny * w + nx;
                    if label[j] == u32::MAX && mask.data()[j] < 0.5 {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
        next += 1;
    }
    for y in 0..h {
        for x in 0..w {
            if far(y, x) {
                groups.entry(label[y * w + x]).or_default().push(image.get(y, x) as f64);
            }
        }
    }
    assert!(groups.len() >= 10);
    let floor = base.noise * base.noise;
    for (cell, v) in groups.iter().filter(|(_, v)| v.len() > 4) {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(var < floor, "cell {cell}: variance {var}");
    }
}

#[test]
fn equalize_two_levels() {
    let img = GrayImage::from_fn(8, 2, |x, y| Luma([if y == 0 && x < 4 { 30 } else { 140 }]));
    let eq = histogram_equalize(&img);
    assert_eq!(eq.get_pixel(0, 0)[0], 64);
    assert_eq!(eq.get_pixel(7, 1)[0], 255);
}

#[test]
fn equalized_cdf_is_near_uniform() {
    let mut r = rng(2);
    for _ in 0..20 {
        let img = GrayImage::from_fn(40, 30, |_, _| Luma([r.random_range(0..=255u8).min(r.random_range(60..=255))]));
        let eq = histogram_equalize(&img);
        let n = (40 * 30) as f64;
        let mut in_hist = [0f64; 256];
        for p in img.pixels() {
            in_hist[p[0] as usize] += 1.0 / n;
        }
        let max_bin = in_hist.iter().cloned().fold(0.0, f64::max);
        let mut out_hist = [0f64; 256];
        for p in eq.pixels() {
            out_hist[p[0] as usize] += 1.0 / n;
        }
        let mut cdf = 0.0;
        for (k, mass) in out_hist.iter().enumerate() {
            cdf += mass;
            let uniform = k as f64 / 255.0;
            assert!((cdf - uniform).abs() < max_bin, "level {k}: {cdf} vs {uniform}, bin {max_bin}");
        }
    }
}

proptest! {
    #[test]
    fn equalization_is_monotone(values in prop::collection::vec(0u8..=255, 1..200)) {
        let img = GrayImage::from_fn(values.len() as u32, 1, |x, _| Luma([values[x as usize]]));
        let eq = histogram_equalize(&img);
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] < values[j] {
                    prop_assert!(eq.get_pixel(i as u32, 0)[0] <= eq.get_pixel(j as u32, 0)[0]);
                }
            }
        }
    }
}

#[test]
fn full_image_patch_is_identity() {
    let image = Plane::from_fn(16, 16, |y, x| ((y * 16 + x) % 256) as f32 / 255.0).unwrap();
    let mask = Plane::from_fn(16, 16, |y, _| (y == 5) as u8 as f32).unwrap();
    let p = extract_patches(&image, &mask, (16, 16), 1, 0, &MaskConfig::default()).unwrap();
    assert_eq!(p[0].image, image);
    assert_eq!(p[0].masks.final_mask, mask);
}

#[test]
fn corners_stay_in_valid_range() {
    let mut r = rng(0);
    let corners = patch_corners((266, 480), (192, 192), 2000, &mut r).unwrap();
    assert!(corners.iter().all(|&(t, l)| t <= 74 && l <= 288));
    assert!(corners.iter().any(|&(t, _)| t == 74) && corners.iter().any(|&(t, _)| t == 0));
    assert!(corners.iter().any(|&(_, l)| l >= 280));
    assert!(patch_corners((10, 10), (11, 4), 1, &mut r).is_err());
}

#[test]
fn patches_are_deterministic_and_aligned() {
    let (h, w) = (40, 50);
    let mut image = Plane::filled(h, w, 0.5).unwrap();
    let mut mask = Plane::filled(h, w, 0.0).unwrap();
    // Marker: one bright image pixel coinciding with one mask pixel.
    for &(y, x) in &[(10, 12), (25, 30), (33, 7)] {
        image.set(y, x, 1.0);
        mask.set(y, x, 1.0);
    }
    let cfg = MaskConfig::default();
    let a = extract_patches(&image, &mask, (16, 16), 30, 9, &cfg).unwrap();
    let b = extract_patches(&image, &mask, (16, 16), 30, 9, &cfg).unwrap();
    assert_eq!(a, b);
    for rec in &a {
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(rec.image.get(y, x) == 1.0, rec.masks.final_mask.get(y, x) == 1.0, "{}", rec.id);
            }
        }
    }
    assert!(extract_patches(&image, &mask, (41, 10), 1, 0, &cfg).is_err());
}

fn write_png(path: &Path) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    GrayImage::from_pixel(8, 8, Luma([0])).save(path).unwrap();
}

#[test]
fn manifest_round_trip_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["i/a.png", "m/a.png", "i/b.png", "m/b.png"] {
        write_png(&dir.path().join(f));
    }
    let m = DatasetManifest {
        root: dir.path().to_path_buf(),
        records: vec![
            ManifestRecord { split: Split::Train, image: "i/a.png".into(), mask: "m/a.png".into() },
            ManifestRecord { split: Split::Val, image: "i/b.png".into(), mask: "m/b.png".into() },
        ],
    };
    let path = dir.path().join("manifest.tsv");
    m.save(&path).unwrap();
    assert_eq!(DatasetManifest::load(&path).unwrap(), m);

    std::fs::remove_file(dir.path().join("m/b.png")).unwrap();
    let err = DatasetManifest::load(&path).unwrap_err();
    match err {
        Error::MissingFile(p) => assert!(p.ends_with("m/b.png"), "{}", p.display()),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn manifest_rejects_overlap() {
    let text = "train\tx.png\tmx.png\ntest\ty.png\tmx.png\n";
    let err = DatasetManifest::parse(text, "m", Path::new("")).unwrap_err().to_string();
    assert!(err.contains("mx.png") && err.contains("train") && err.contains("test"), "{err}");
}

#[test]
fn synthesized_dataset_loads_and_repeats() {
    let synth = SynthConfig { height: 48, width: 48, cells: 12, ..Default::default() };
    let spec = DatasetSpec {
        train_images: 2,
        val_images: 1,
        test_images: 1,
        patches_per_image: 2,
        patch_size: 32,
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = synthesize_dataset(&synth, &spec, a.path()).unwrap();
    synthesize_dataset(&synth, &spec, b.path()).unwrap();
    assert_eq!((ma.count(Split::Train), ma.count(Split::Val), ma.count(Split::Test)), (4, 2, 2));
    for r in &ma.records {
        for p in [&r.image, &r.mask] {
            assert_eq!(std::fs::read(a.path().join(p)).unwrap(), std::fs::read(b.path().join(p)).unwrap());
        }
    }
    let loaded = DatasetManifest::load(&a.path().join("manifest.tsv")).unwrap();
    let val = load_split(&loaded, Split::Val, &MaskConfig::default()).unwrap();
    assert_eq!(val.len(), 2);
    assert_eq!(val[0].dims(), (32, 32));
    assert!(val[0].image.data().contains(&1.0));
}
