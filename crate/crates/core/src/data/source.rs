use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::preprocess::{preprocess, CropMode};
use super::Sample;
use crate::error::{Error, Result};
use crate::npr::{extract_npr, GridSpec, ImageTensor, Pivot};
use crate::seed;

/// What the detector sees for each image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Npr(GridSpec),
    /// Raw `[0, 1]` pixels; the control input.
    Pixels,
}

impl Default for Representation {
    fn default() -> Self {
        Representation::Npr(GridSpec::default())
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Representation::Npr(g) => write!(f, "npr:l={}:pivot={}", g.side(), g.pivot()),
            Representation::Pixels => f.write_str("pixels"),
        }
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "pixels" {
            return Ok(Representation::Pixels);
        }
        let bad = || Error::Format(format!("unknown input representation '{s}'"));
        let rest = s.strip_prefix("npr:l=").ok_or_else(bad)?;
        let (l, pivot) = rest.split_once(":pivot=").ok_or_else(bad)?;
        let l: usize = l.parse().map_err(|_| bad())?;
        let pivot: Pivot = pivot.parse()?;
        Ok(Representation::Npr(GridSpec::new(l, pivot)?))
    }
}

impl Representation {
    /// Planar `3 × H × W` features of an RGB image.
    pub fn features(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        match self {
            Representation::Npr(g) => Ok(extract_npr(image, *g)?.to_planar()),
            Representation::Pixels => Ok(image.to_planar()),
        }
    }

    /// Feature dims for a square `crop` input.
    pub fn dims(&self, crop: usize) -> [usize; 3] {
        match self {
            Representation::Npr(g) => [3, g.divisible(crop), g.divisible(crop)],
            Representation::Pixels => [3, crop, crop],
        }
    }
}

/// Indexed, labeled feature provider consumed by batching and training.
pub trait FeatureSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, index: usize) -> u8;

    /// `C × H × W` shape shared by every feature.
    fn dims(&self) -> [usize; 3];

    /// Planar feature of one sample; `epoch` drives any per-epoch randomness.
    fn feature(&self, index: usize, epoch: u64) -> Result<Vec<f32>>;

    /// Human-readable sample identity used in error messages.
    fn describe(&self, index: usize) -> String {
        format!("sample {index}")
    }
}

/// Precomputed features held in memory.
#[derive(Debug, Clone)]
pub struct MemorySet {
    dims: [usize; 3],
    features: Vec<Vec<f32>>,
    labels: Vec<u8>,
}

impl MemorySet {
    pub fn new(dims: [usize; 3], features: Vec<Vec<f32>>, labels: Vec<u8>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} features vs {} labels",
                features.len(),
                labels.len()
            )));
        }
        let per: usize = dims.iter().product();
        if let Some(i) = features.iter().position(|f| f.len() != per) {
            return Err(Error::Shape(format!("feature {i} does not match dims {dims:?}")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Config(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self {
            dims,
            features,
            labels,
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            dims: self.dims,
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        Self::new(self.dims, self.features.clone(), labels)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

impl FeatureSource for MemorySet {
    fn len(&self) -> usize {
        self.features.len()
    }

    fn label(&self, index: usize) -> u8 {
        self.labels[index]
    }

    fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn feature(&self, index: usize, _epoch: u64) -> Result<Vec<f32>> {
        Ok(self.features[index].clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSetOptions {
    pub crop: usize,
    /// Random crops (seeded per sample and epoch) instead of center crops.
    pub random_crop: bool,
    pub seed: u64,
    pub allow_upscale: bool,
    pub representation: Representation,
}

/// Decoded corpus images turned into features on demand.
///
/// Images are decoded once, in parallel, at construction. With center crops
/// the features do not depend on the epoch and are cached as well.
pub struct ImageSet {
    samples: Vec<Sample>,
    images: Vec<ImageTensor>,
    cached: Option<Vec<Vec<f32>>>,
    upscaled: Vec<bool>,
    options: ImageSetOptions,
}

impl ImageSet {
    pub fn new(samples: Vec<Sample>, options: ImageSetOptions) -> Result<Self> {
        if let Representation::Npr(g) = options.representation {
            if options.crop < g.side() {
                return Err(Error::Config(format!(
                    "crop {} is smaller than the {}x{} grid",
                    options.crop,
                    g.side(),
                    g.side()
                )));
            }
        }
        let images = samples
            .par_iter()
            .map(|s| ImageTensor::load(&s.path).map(|img| img.to_rgb()))
            .collect::<Result<Vec<_>>>()?;
        let mut set = Self {
            samples,
            images,
            cached: None,
            upscaled: Vec::new(),
            options,
        };
        set.upscaled = set
            .images
            .iter()
            .map(|img| img.height().min(img.width()) < options.crop)
            .collect();
        if set.upscaled.iter().any(|&u| u) && !options.allow_upscale {
            let i = set.upscaled.iter().position(|&u| u).unwrap();
            return Err(Error::Shape(format!(
                "{} is smaller than the {}px crop",
                set.samples[i].path.display(),
                options.crop
            )));
        }
        if !options.random_crop {
            let feats = (0..set.len())
                .into_par_iter()
                .map(|i| set.compute(i, 0))
                .collect::<Result<Vec<_>>>()?;
            set.cached = Some(feats);
        }
        Ok(set)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Number of images that had to be enlarged to reach the crop size.
    pub fn upscaled_count(&self) -> usize {
        self.upscaled.iter().filter(|&&u| u).count()
    }

    fn compute(&self, index: usize, epoch: u64) -> Result<Vec<f32>> {
        let mode = if self.options.random_crop {
            CropMode::Random(seed::derive(
                self.options.seed,
                &[seed::hash_str("crop"), epoch, index as u64],
            ))
        } else {
            CropMode::Center
        };
        let pre = preprocess(&self.images[index], self.options.crop, mode, self.options.allow_upscale)?;
        self.options.representation.features(&pre.image)
    }
}

impl FeatureSource for ImageSet {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn label(&self, index: usize) -> u8 {
        self.samples[index].label
    }

    fn dims(&self) -> [usize; 3] {
        self.options.representation.dims(self.options.crop)
    }

    fn feature(&self, index: usize, epoch: u64) -> Result<Vec<f32>> {
        match &self.cached {
            Some(c) => Ok(c[index].clone()),
            None => self.compute(index, epoch),
        }
    }

    fn describe(&self, index: usize) -> String {
        self.samples[index].path.display().to_string()
    }
}
