//! Default configuration shared by the library and the CLI.

use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_CROP;
use crate::nn::{DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE};
use crate::npr::GridSpec;

/// Seed used by the reproduction run when none is given.
pub const DEFAULT_SEED: u64 = 1337;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Defaults {
    pub grid: GridSpec,
    pub lr: f64,
    pub batch_size: usize,
    pub crop: usize,
    pub seed: u64,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            lr: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            crop: DEFAULT_CROP,
            seed: DEFAULT_SEED,
        }
    }
}
