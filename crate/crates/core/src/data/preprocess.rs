use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npr::ImageTensor;
use crate::seed;

pub const DEFAULT_CROP: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    Center,
    /// Offsets drawn uniformly from a stream seeded by the value.
    Random(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub image: ImageTensor,
    /// Set when the source had to be enlarged, which alters NPR statistics.
    pub upscaled: bool,
}

fn resize_nearest(img: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    let (sh, sw) = (img.height(), img.width());
    ImageTensor::from_fn(height, width, img.channels(), |y, x, c| {
        img.get(y * sh / height, x * sw / width, c)
    })
}

/// Promotes to RGB, optionally enlarges, and crops a `crop × crop` window.
///
/// Images with a side shorter than `crop` are enlarged with nearest-neighbor
/// sampling so the shorter side equals `crop` when `allow_upscale` is set,
/// and rejected otherwise.
pub fn preprocess(
    image: &ImageTensor,
    crop: usize,
    mode: CropMode,
    allow_upscale: bool,
) -> Result<Preprocessed> {
    if crop == 0 {
        return Err(Error::Config("crop size must be positive".into()));
    }
    let mut img = image.to_rgb();
    let mut upscaled = false;
    let shorter = img.height().min(img.width());
    if shorter < crop {
        if !allow_upscale {
            return Err(Error::Shape(format!(
                "{}x{} image is smaller than the {crop}px crop",
                img.height(),
                img.width()
            )));
        }
        let scale = |n: usize| (n * crop).div_ceil(shorter);
        img = resize_nearest(&img, scale(img.height()), scale(img.width()))?;
        upscaled = true;
    }
    let (top, left) = match mode {
        CropMode::Center => ((img.height() - crop) / 2, (img.width() - crop) / 2),
        CropMode::Random(s) => {
            let mut rng = seed::rng(s);
            (
                rng.gen_range(0..=img.height() - crop),
                rng.gen_range(0..=img.width() - crop),
            )
        }
    };
    Ok(Preprocessed {
        image: img.crop(top, left, crop, crop)?,
        upscaled,
    })
}
