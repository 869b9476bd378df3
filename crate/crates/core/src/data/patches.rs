use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::supervision::{MaskConfig, MaskTriplet};

/// One training example: an equalized image in `[0, 1]` and its targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub image: Plane,
    pub masks: MaskTriplet,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, image: Plane, final_mask: &Plane, cfg: &MaskConfig) -> Result<Self> {
        let id = id.into();
        if image.dims() != final_mask.dims() {
            return Err(Error::shape(
                "SampleRecord",
                format!("{id}: image {:?} vs mask {:?}", image.dims(), final_mask.dims()),
            ));
        }
        Ok(Self {
            masks: MaskTriplet::derive(final_mask, cfg)?,
            image,
            id,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }
}

/// Uniformly sampled top-left corners for `count` patches.
pub fn patch_corners(
    dims: (usize, usize),
    patch: (usize, usize),
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>> {
    if patch.0 == 0 || patch.1 == 0 || patch.0 > dims.0 || patch.1 > dims.1 {
        return Err(Error::config(
            "patch_size",
            format!("patch {}x{} does not fit in a {}x{} image", patch.0, patch.1, dims.0, dims.1),
        ));
    }
    Ok((0..count)
        .map(|_| {
            (
                rng.random_range(0..=dims.0 - patch.0),
                rng.random_range(0..=dims.1 - patch.1),
            )
        })
        .collect())
}

/// Crops image and mask jointly at random corners and derives the targets
/// of every patch.
pub fn extract_patches(
    image: &Plane,
    mask: &Plane,
    patch: (usize, usize),
    count: usize,
    seed: u64,
    cfg: &MaskConfig,
) -> Result<Vec<SampleRecord>> {
    if image.dims() != mask.dims() {
        return Err(Error::shape(
            "extract_patches",
            format!("image {:?} vs mask {:?}", image.dims(), mask.dims()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patch_corners(image.dims(), patch, count, &mut rng)?
        .into_iter()
        .enumerate()
        .map(|(i, (top, left))| {
            SampleRecord::new(
                format!("patch{i}_{top}_{left}"),
                image.crop(top, left, patch.0, patch.1)?,
                &mask.crop(top, left, patch.0, patch.1)?,
                cfg,
            )
        })
        .collect()
}
