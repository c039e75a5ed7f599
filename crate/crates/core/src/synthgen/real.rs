use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::npr::ImageTensor;
use crate::seed;

pub const MIN_REAL_SIZE: usize = 32;
/// Lattice spacing of the coarsest octave, in pixels; halves per octave.
const BASE_CELL: usize = 16;
const OCTAVES: usize = 4;
const PIXEL_NOISE: f32 = 0.05;
/// Weight of the field shared by all channels; the rest is per channel.
const SHARED_WEIGHT: f32 = 0.7;

struct Lattice {
    cell: usize,
    cols: usize,
    values: Vec<f32>,
}

impl Lattice {
    fn new(rng: &mut ChaCha8Rng, height: usize, width: usize, cell: usize) -> Self {
        let rows = height / cell + 2;
        let cols = width / cell + 2;
        let values = (0..rows * cols).map(|_| rng.gen::<f32>()).collect();
        Self { cell, cols, values }
    }

    fn sample(&self, y: usize, x: usize) -> f32 {
        let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
        let (iy, ix) = (y / self.cell, x / self.cell);
        let ty = smooth((y % self.cell) as f32 / self.cell as f32);
        let tx = smooth((x % self.cell) as f32 / self.cell as f32);
        let v = |r: usize, c: usize| self.values[r * self.cols + c];
        let top = v(iy, ix) + (v(iy, ix + 1) - v(iy, ix)) * tx;
        let bot = v(iy + 1, ix) + (v(iy + 1, ix + 1) - v(iy + 1, ix)) * tx;
        top + (bot - top) * ty
    }
}

/// Multi-octave value noise normalized to `[0, 1]`.
fn value_noise(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Vec<f32> {
    let lattices: Vec<(f32, Lattice)> = (0..OCTAVES)
        .map(|o| (0.5f32.powi(o as i32), Lattice::new(rng, height, width, BASE_CELL >> o)))
        .collect();
    let total: f32 = lattices.iter().map(|(a, _)| a).sum();
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let v: f32 = lattices.iter().map(|(a, l)| a * l.sample(y, x)).sum();
            out.push(v / total);
        }
    }
    out
}

/// Seeded procedural texture standing in for a real photograph: a shared
/// multi-octave value-noise field blended with per-channel fields, plus
/// independent per-pixel uniform noise of amplitude 0.05, clamped to `[0, 1]`.
pub fn procedural_real(seed_value: u64, height: usize, width: usize) -> Result<ImageTensor> {
    if height < MIN_REAL_SIZE || width < MIN_REAL_SIZE {
        return Err(Error::Config(format!(
            "procedural images need at least {MIN_REAL_SIZE}x{MIN_REAL_SIZE} pixels, got {height}x{width}"
        )));
    }
    let mut rng = seed::rng(seed::derive(seed_value, &[seed::hash_str("procedural-real")]));
    let shared = value_noise(&mut rng, height, width);
    let per_channel: Vec<Vec<f32>> = (0..3).map(|_| value_noise(&mut rng, height, width)).collect();
    let mut data = Vec::with_capacity(height * width * 3);
    for (i, &s) in shared.iter().enumerate() {
        for field in &per_channel {
            let base = SHARED_WEIGHT * s + (1.0 - SHARED_WEIGHT) * field[i];
            let noise = rng.gen_range(-PIXEL_NOISE..=PIXEL_NOISE);
            data.push((base + noise).clamp(0.0, 1.0));
        }
    }
    ImageTensor::new(height, width, 3, data)
}
