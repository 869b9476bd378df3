//! Synthetic datasets, equalization, patch extraction and manifests.

mod equalize;
mod manifest;
mod patches;
mod synth;

use std::path::Path;

use image::GrayImage;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub use equalize::histogram_equalize;
pub use manifest::{DatasetManifest, ManifestRecord, Split};
pub use patches::{extract_patches, patch_corners, SampleRecord};
pub use synth::{generate_voronoi_mosaic, jittered_sites, voronoi_border_mask, Site, SynthConfig, SYNTH_KEYS};

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::plane::Plane;
use crate::supervision::png::{self, load_mask_png};
use crate::supervision::MaskConfig;

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Independent child seed for stream `tag` of a master seed.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    // splitmix64 finalizer over the combined words.
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How many source images go to each split and how they are cut into
/// patches. Splits are assigned per source image so no two splits share
/// pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSpec {
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    pub patches_per_image: usize,
    pub patch_size: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            train_images: 16,
            val_images: 2,
            test_images: 2,
            patches_per_image: 4,
            patch_size: 64,
        }
    }
}

pub const DATASET_KEYS: &[&str] = &["train_images", "val_images", "test_images", "patches_per_image", "patch_size"];

impl DatasetSpec {
    pub fn images(&self) -> usize {
        self.train_images + self.val_images + self.test_images
    }

    pub fn patches(&self, split: Split) -> usize {
        self.patches_per_image
            * match split {
                Split::Train => self.train_images,
                Split::Val => self.val_images,
                Split::Test => self.test_images,
            }
    }

    pub fn validate(&self, synth: &SynthConfig) -> Result<()> {
        if self.train_images == 0 {
            return Err(Error::config("train_images", "must be at least 1"));
        }
        if self.patches_per_image == 0 {
            return Err(Error::config("patches_per_image", "must be at least 1"));
        }
        if self.patch_size == 0 || self.patch_size > synth.height || self.patch_size > synth.width {
            return Err(Error::config(
                "patch_size",
                format!("{} does not fit in {}x{} images", self.patch_size, synth.height, synth.width),
            ));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvFile {
        KvFile::from_pairs([
            ("train_images", self.train_images),
            ("val_images", self.val_images),
            ("test_images", self.test_images),
            ("patches_per_image", self.patches_per_image),
            ("patch_size", self.patch_size),
        ])
    }

    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<()> {
        for (key, slot) in [
            ("train_images", &mut self.train_images),
            ("val_images", &mut self.val_images),
            ("test_images", &mut self.test_images),
            ("patches_per_image", &mut self.patches_per_image),
            ("patch_size", &mut self.patch_size),
        ] {
            if let Some(v) = kv.value(key)? {
                *slot = v;
            }
        }
        Ok(())
    }

    fn split_of(&self, image: usize) -> Split {
        if image < self.train_images {
            Split::Train
        } else if image < self.train_images + self.val_images {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Generates every source image, cuts it into patches and writes
/// `images/`, `masks/` and the manifest below `out`.
pub fn synthesize_dataset(synth: &SynthConfig, spec: &DatasetSpec, out: &Path) -> Result<DatasetManifest> {
    synth.validate()?;
    spec.validate(synth)?;
    std::fs::create_dir_all(out.join("images"))?;
    std::fs::create_dir_all(out.join("masks"))?;
    let mut manifest = DatasetManifest {
        root: out.to_path_buf(),
        records: Vec::new(),
    };
    let size = (spec.patch_size, spec.patch_size);
    for i in 0..spec.images() {
        let cfg = SynthConfig {
            seed: derive_seed(synth.seed, i as u64),
            ..synth.clone()
        };
        let (image, mask) = generate_voronoi_mosaic(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(synth.seed, (1 << 32) | i as u64));
        let split = spec.split_of(i);
        for (k, (top, left)) in patch_corners(image.dims(), size, spec.patches_per_image, &mut rng)?
            .into_iter()
            .enumerate()
        {
            let name = format!("{split}_{i:03}_{k}.png");
            let image_rel = Path::new("images").join(&name);
            let mask_rel = Path::new("masks").join(&name);
            png::save_png(&image.crop(top, left, size.0, size.1)?, &out.join(&image_rel))?;
            png::save_png(&mask.crop(top, left, size.0, size.1)?, &out.join(&mask_rel))?;
            manifest.records.push(ManifestRecord {
                split,
                image: image_rel,
                mask: mask_rel,
            });
        }
    }
    manifest.save(&out.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Loads an 8-bit image, equalizes it and scales it to `[0, 1]`.
pub fn load_equalized(path: &Path) -> Result<Plane> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let gray: GrayImage = image::open(path)?.to_luma8();
    png::from_gray(&histogram_equalize(&gray))
}

pub fn load_record(manifest: &DatasetManifest, record: &ManifestRecord, cfg: &MaskConfig) -> Result<SampleRecord> {
    let image = load_equalized(&manifest.resolve(&record.image))?;
    let mask = load_mask_png(&manifest.resolve(&record.mask))?;
    let id = record
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| record.image.display().to_string());
    SampleRecord::new(id, image, &mask, cfg)
}

pub fn load_split(manifest: &DatasetManifest, split: Split, cfg: &MaskConfig) -> Result<Vec<SampleRecord>> {
    manifest.split(split).map(|r| load_record(manifest, r, cfg)).collect()
}
