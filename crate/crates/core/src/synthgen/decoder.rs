use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv2d_forward, Tensor4};
use crate::npr::ImageTensor;
use crate::seed;

const KERNEL: usize = 3;
const LEAKY_SLOPE: f32 = 0.2;
const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleKind {
    Nearest,
    Bilinear,
}

impl fmt::Display for UpsampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpsampleKind::Nearest => "nearest",
            UpsampleKind::Bilinear => "bilinear",
        })
    }
}

impl FromStr for UpsampleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(UpsampleKind::Nearest),
            "bilinear" => Ok(UpsampleKind::Bilinear),
            _ => Err(Error::Config(format!("unknown upsampling '{s}' (nearest, bilinear)"))),
        }
    }
}

/// Parameters that fully determine a toy generator tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub seed: u64,
    pub upsample_kind: UpsampleKind,
    /// Number of ×2 upsample + conv stages.
    pub depth: usize,
    pub channels_hidden: usize,
}

impl DecoderSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.depth) {
            return Err(Error::Config(format!("decoder depth {} outside 1..=3", self.depth)));
        }
        if !(4..=16).contains(&self.channels_hidden) {
            return Err(Error::Config(format!(
                "decoder hidden channels {} outside 4..=16",
                self.channels_hidden
            )));
        }
        Ok(())
    }

    /// Total spatial enlargement, `2^depth`.
    pub fn factor(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvWeights {
    weight: Tensor4<f32>,
    bias: Vec<f32>,
}

impl ConvWeights {
    /// Non-negative kernels are smoothing filters, as trained generator
    /// tails tend to be; zero-mean ones act as edge detectors and turn the
    /// output into noise.
    fn random(rng: &mut impl Rng, out_c: usize, in_c: usize) -> Self {
        let bound = 1.0 / ((in_c * KERNEL * KERNEL) as f64).sqrt();
        let mut draw = || rng.gen_range(0.0..=bound) as f32;
        let weight = Tensor4::from_fn([out_c, in_c, KERNEL, KERNEL], |_| draw());
        let bias = (0..out_c).map(|_| draw()).collect();
        Self { weight, bias }
    }

    /// Output channel `o` copies input channel `o` (when it exists).
    fn delta(out_c: usize, in_c: usize) -> Self {
        let weight = Tensor4::from_fn([out_c, in_c, KERNEL, KERNEL], |[o, i, y, x]| {
            if o == i && y == KERNEL / 2 && x == KERNEL / 2 {
                1.0
            } else {
                0.0
            }
        });
        Self {
            weight,
            bias: vec![0.0; out_c],
        }
    }

    fn fan_in(&self) -> usize {
        let d = self.weight.dims();
        d[1] * d[2] * d[3]
    }
}

/// Materialized generator tail: `depth` stages of (×2 upsample, 3×3 conv,
/// leaky ReLU 0.2), then a 3×3 conv to RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    spec: DecoderSpec,
    stages: Vec<ConvWeights>,
    output: ConvWeights,
}

/// Draws decoder weights and biases uniformly in `[0, 1/√fan-in]` from a
/// stream seeded by `seed`.
pub fn make_decoder(
    seed_value: u64,
    upsample_kind: UpsampleKind,
    depth: usize,
    channels_hidden: usize,
) -> Result<Decoder> {
    Decoder::from_spec(DecoderSpec {
        seed: seed_value,
        upsample_kind,
        depth,
        channels_hidden,
    })
}

impl Decoder {
    pub fn from_spec(spec: DecoderSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(seed::derive(spec.seed, &[seed::hash_str("decoder")]));
        let stages = (0..spec.depth)
            .map(|s| {
                let in_c = if s == 0 { IMAGE_CHANNELS } else { spec.channels_hidden };
                ConvWeights::random(&mut rng, spec.channels_hidden, in_c)
            })
            .collect();
        let output = ConvWeights::random(&mut rng, IMAGE_CHANNELS, spec.channels_hidden);
        Ok(Self {
            spec,
            stages,
            output,
        })
    }

    /// Decoder whose convolutions are all delta kernels routing the three
    /// image channels straight through.
    pub fn identity(upsample_kind: UpsampleKind, depth: usize, channels_hidden: usize) -> Result<Self> {
        let spec = DecoderSpec {
            seed: 0,
            upsample_kind,
            depth,
            channels_hidden,
        };
        spec.validate()?;
        let stages = (0..depth)
            .map(|s| {
                let in_c = if s == 0 { IMAGE_CHANNELS } else { channels_hidden };
                ConvWeights::delta(channels_hidden, in_c)
            })
            .collect();
        Ok(Self {
            spec,
            stages,
            output: ConvWeights::delta(IMAGE_CHANNELS, channels_hidden),
        })
    }

    /// Keeps the random stages but replaces the final conv with a delta kernel.
    pub fn with_delta_output(mut self) -> Self {
        self.output = ConvWeights::delta(IMAGE_CHANNELS, self.spec.channels_hidden);
        self
    }

    pub fn spec(&self) -> &DecoderSpec {
        &self.spec
    }

    /// All weights and biases, little-endian, in layer order.
    pub fn weight_bytes(&self) -> Vec<u8> {
        self.stages
            .iter()
            .chain(std::iter::once(&self.output))
            .flat_map(|c| c.weight.data().iter().chain(&c.bias))
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }

    /// Largest `|w| · √fan-in` over all weights and biases; at most 1.
    pub fn max_scaled_magnitude(&self) -> f64 {
        self.stages
            .iter()
            .chain(std::iter::once(&self.output))
            .flat_map(|c| {
                let s = (c.fan_in() as f64).sqrt();
                c.weight.data().iter().chain(&c.bias).map(move |v| v.abs() as f64 * s)
            })
            .fold(0.0, f64::max)
    }
}

/// Mean over non-overlapping `factor × factor` blocks, planar output.
fn box_downsample(img: &ImageTensor, factor: usize) -> Tensor4<f32> {
    let (h, w, c) = (img.height() / factor, img.width() / factor, img.channels());
    let norm = (factor * factor) as f64;
    Tensor4::from_fn([1, c, h, w], |[_, ch, y, x]| {
        let mut s = 0.0f64;
        for dy in 0..factor {
            for dx in 0..factor {
                s += img.get(y * factor + dy, x * factor + dx, ch) as f64;
            }
        }
        (s / norm) as f32
    })
}

fn upsample2(x: &Tensor4<f32>, kind: UpsampleKind) -> Tensor4<f32> {
    let [n, c, h, w] = x.dims();
    match kind {
        UpsampleKind::Nearest => Tensor4::from_fn([n, c, 2 * h, 2 * w], |[b, ch, y, xx]| {
            x.at([b, ch, y / 2, xx / 2])
        }),
        UpsampleKind::Bilinear => {
            // Half-pixel centers: output i samples input coordinate (i + 0.5) / 2 − 0.5.
            let taps = |i: usize, len: usize| -> (usize, usize, f32) {
                let src = (i as f32 + 0.5) / 2.0 - 0.5;
                let lo = src.floor();
                let t = src - lo;
                let clamp = |v: f32| (v.max(0.0) as usize).min(len - 1);
                (clamp(lo), clamp(lo + 1.0), t)
            };
            Tensor4::from_fn([n, c, 2 * h, 2 * w], |[b, ch, y, xx]| {
                let (y0, y1, ty) = taps(y, h);
                let (x0, x1, tx) = taps(xx, w);
                let top = x.at([b, ch, y0, x0]) * (1.0 - tx) + x.at([b, ch, y0, x1]) * tx;
                let bot = x.at([b, ch, y1, x0]) * (1.0 - tx) + x.at([b, ch, y1, x1]) * tx;
                top * (1.0 - ty) + bot * ty
            })
        }
    }
}

fn channel_moments(plane: &[f32]) -> (f64, f64) {
    let n = plane.len() as f64;
    let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Synthesizes a fake from `source`.
///
/// The source is box-downsampled by `2^depth` into a latent, decoded by the
/// stages and the output conv, tone-matched per channel to the latent's
/// mean and standard deviation, and clamped to `[0, 1]`. Tone matching is a
/// per-channel affine map, so it leaves the relationships between
/// neighboring pixels intact while keeping fakes content-matched to their
/// real counterparts.
pub fn generate_fake(source: &ImageTensor, decoder: &Decoder) -> Result<ImageTensor> {
    let factor = decoder.spec.factor();
    if source.channels() != IMAGE_CHANNELS {
        return Err(Error::Shape(format!(
            "decoder expects RGB sources, got {} channels",
            source.channels()
        )));
    }
    if source.height() % factor != 0 || source.width() % factor != 0 {
        return Err(Error::Shape(format!(
            "{}x{} source is not divisible by the decoder factor {factor}",
            source.height(),
            source.width()
        )));
    }
    let latent = box_downsample(source, factor);
    let mut x = latent.clone();
    for stage in &decoder.stages {
        x = upsample2(&x, decoder.spec.upsample_kind);
        x = conv2d_forward(&x, &stage.weight, &stage.bias, 1, KERNEL / 2)?;
        for v in x.data_mut() {
            if *v < 0.0 {
                *v *= LEAKY_SLOPE;
            }
        }
    }
    let y = conv2d_forward(&x, &decoder.output.weight, &decoder.output.bias, 1, KERNEL / 2)?;

    let [_, c, h, w] = y.dims();
    let plane = h * w;
    let lplane = latent.sample_len() / c;
    let mut planes = vec![0.0f32; c * plane];
    for ch in 0..c {
        let (lm, ls) = channel_moments(&latent.data()[ch * lplane..(ch + 1) * lplane]);
        let src = &y.data()[ch * plane..(ch + 1) * plane];
        let (ym, ys) = channel_moments(src);
        let scale = if ys > 1e-12 { ls / ys } else { 1.0 };
        for (d, &v) in planes[ch * plane..(ch + 1) * plane].iter_mut().zip(src) {
            *d = ((v as f64 - ym) * scale + lm).clamp(0.0, 1.0) as f32;
        }
    }
    ImageTensor::from_fn(h, w, c, |yy, xx, ch| planes[ch * plane + yy * w + xx])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinism_and_seed_sensitivity() {
        let a = make_decoder(7, UpsampleKind::Nearest, 1, 8).unwrap();
        let b = make_decoder(7, UpsampleKind::Nearest, 1, 8).unwrap();
        let c = make_decoder(8, UpsampleKind::Nearest, 1, 8).unwrap();
        assert_eq!(a.weight_bytes(), b.weight_bytes());
        assert_ne!(a.weight_bytes(), c.weight_bytes());
    }

    #[test]
    fn weights_respect_fan_in_bound() {
        for depth in 1..=3 {
            for hidden in [4, 9, 16] {
                let d = make_decoder(depth as u64 * 31 + hidden as u64, UpsampleKind::Bilinear, depth, hidden)
                    .unwrap();
                assert!(d.max_scaled_magnitude() <= 1.0 + 1e-6);
                assert!(d.max_scaled_magnitude() > 0.5);
            }
        }
    }

    #[test]
    fn parameter_ranges() {
        assert!(make_decoder(1, UpsampleKind::Nearest, 0, 8).is_err());
        assert!(make_decoder(1, UpsampleKind::Nearest, 4, 8).is_err());
        assert!(make_decoder(1, UpsampleKind::Nearest, 1, 3).is_err());
        assert!(make_decoder(1, UpsampleKind::Nearest, 1, 17).is_err());
    }

    #[test]
    fn bilinear_upsample_weights() {
        let x = Tensor4::new([1, 1, 1, 2], vec![0.0f32, 1.0]).unwrap();
        let y = upsample2(&x, UpsampleKind::Bilinear);
        assert_eq!(y.data()[..4], [0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn shape_and_divisibility() {
        let d = make_decoder(3, UpsampleKind::Bilinear, 2, 6).unwrap();
        let src = ImageTensor::from_fn(16, 12, 3, |y, x, c| ((y + x + c) % 5) as f32 / 4.0).unwrap();
        let out = generate_fake(&src, &d).unwrap();
        assert_eq!((out.height(), out.width(), out.channels()), (16, 12, 3));
        let odd = ImageTensor::filled(10, 12, 3, 0.5).unwrap();
        assert!(generate_fake(&odd, &d).is_err());
        let gray = ImageTensor::filled(16, 16, 1, 0.5).unwrap();
        assert!(generate_fake(&gray, &d).is_err());
    }

    #[test]
    fn identity_decoder_keeps_constant_images() {
        for kind in [UpsampleKind::Nearest, UpsampleKind::Bilinear] {
            let d = Decoder::identity(kind, 1, 8).unwrap();
            let src = ImageTensor::filled(8, 8, 3, 0.375).unwrap();
            assert_eq!(generate_fake(&src, &d).unwrap(), src);
        }
    }
}
