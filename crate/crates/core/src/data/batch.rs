use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::source::FeatureSource;
use crate::error::{Error, Result};
use crate::nn::Tensor4;
use crate::seed;

/// One mini-batch: stacked features, labels and the source indices used.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Tensor4<f32>,
    pub labels: Vec<u8>,
    pub indices: Vec<usize>,
}

/// Visiting order of `len` samples in `epoch`, seeded by `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = seed::rng(seed::derive(seed, &[seed::hash_str("shuffle"), epoch]));
    order.shuffle(&mut rng);
    order
}

/// Lazily assembled batches over a feature source; the last batch keeps
/// whatever samples remain.
pub struct Batches<'a> {
    source: &'a dyn FeatureSource,
    order: Vec<usize>,
    batch_size: usize,
    epoch: u64,
    pos: usize,
}

impl<'a> Batches<'a> {
    pub fn in_order(source: &'a dyn FeatureSource, order: Vec<usize>, batch_size: usize, epoch: u64) -> Self {
        Self {
            source,
            order,
            batch_size: batch_size.max(1),
            epoch,
            pos: 0,
        }
    }

    pub fn shuffled(source: &'a dyn FeatureSource, batch_size: usize, seed: u64, epoch: u64) -> Self {
        Self::in_order(source, epoch_order(source.len(), seed, epoch), batch_size, epoch)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Sizes of the batches this iterator will produce.
    pub fn sizes(&self) -> Vec<usize> {
        self.order.chunks(self.batch_size).map(<[usize]>::len).collect()
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let source = self.source;
        let epoch = self.epoch;
        let feats = indices
            .par_iter()
            .map(|&i| {
                source.feature(i, epoch).map_err(|e| match e {
                    Error::Decode { path, message } => Error::Decode { path, message },
                    other => Error::Dataset(format!("{}: {other}", source.describe(i))),
                })
            })
            .collect::<Result<Vec<_>>>();
        let labels = indices.iter().map(|&i| source.label(i)).collect();
        Some(feats.and_then(|f| {
            Ok(Batch {
                features: Tensor4::stack(source.dims(), &f)?,
                labels,
                indices,
            })
        }))
    }
}

/// Shuffled batches of one epoch.
pub fn make_batches(
    source: &dyn FeatureSource,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Batches<'_>> {
    if source.is_empty() {
        return Err(Error::Dataset("cannot batch an empty sample list".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    Ok(Batches::shuffled(source, batch_size, seed, epoch))
}
