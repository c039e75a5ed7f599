//! The residual detector.
//!
//! ```text
//! conv3x3 3→16 + ReLU
//! residual block 16 (conv3x3 → ReLU → conv3x3, identity skip, ReLU)
//! conv3x3 16→32 stride 2 + ReLU
//! residual block 32
//! global average pool → affine 32→1 (logit)
//! ```
//! There is no normalization layer; every sample is processed independently.

use rand::Rng;
use rayon::prelude::*;

use super::conv::{backward_sample, forward_sample, sum_f64, ConvGeometry, ConvScratch};
use super::loss::bce_loss;
use super::real::Real;
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::seed;

/// Descriptor stored in checkpoints; loading refuses any other value.
pub const ARCHITECTURE: &str =
    "npr-resnet-v1:conv3x3(3->16)+relu|res(16)|conv3x3s2(16->32)+relu|res(32)|gap|affine(32->1)";

pub const INPUT_CHANNELS: usize = 3;
const WIDTH_1: usize = 16;
const WIDTH_2: usize = 32;
const KERNEL: usize = 3;

const STEM_W: usize = 0;
const RES1_W1: usize = 2;
const RES1_W2: usize = 4;
const DOWN_W: usize = 6;
const RES2_W1: usize = 8;
const RES2_W2: usize = 10;
const HEAD_W: usize = 12;
const HEAD_B: usize = 13;

/// Named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: &str, dims: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            dims: dims.to_vec(),
            data: vec![T::ZERO; dims.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Parameter layout: `(name, dims)` in storage order.
pub fn parameter_layout() -> Vec<(&'static str, Vec<usize>)> {
    let conv = |o, i| vec![o, i, KERNEL, KERNEL];
    vec![
        ("stem.weight", conv(WIDTH_1, INPUT_CHANNELS)),
        ("stem.bias", vec![WIDTH_1]),
        ("res1.conv1.weight", conv(WIDTH_1, WIDTH_1)),
        ("res1.conv1.bias", vec![WIDTH_1]),
        ("res1.conv2.weight", conv(WIDTH_1, WIDTH_1)),
        ("res1.conv2.bias", vec![WIDTH_1]),
        ("down.weight", conv(WIDTH_2, WIDTH_1)),
        ("down.bias", vec![WIDTH_2]),
        ("res2.conv1.weight", conv(WIDTH_2, WIDTH_2)),
        ("res2.conv1.bias", vec![WIDTH_2]),
        ("res2.conv2.weight", conv(WIDTH_2, WIDTH_2)),
        ("res2.conv2.bias", vec![WIDTH_2]),
        ("head.weight", vec![1, WIDTH_2]),
        ("head.bias", vec![1]),
    ]
}

/// Per-parameter gradients, accumulated in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like<T: Real>(params: &[Param<T>]) -> Self {
        Self {
            grads: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometries {
    stem: ConvGeometry,
    res1: ConvGeometry,
    down: ConvGeometry,
    res2: ConvGeometry,
}

impl Geometries {
    fn new(height: usize, width: usize) -> Result<Self> {
        let stem = ConvGeometry::new([INPUT_CHANNELS, height, width], WIDTH_1, KERNEL, 1, 1)?;
        let res1 = ConvGeometry::new([WIDTH_1, height, width], WIDTH_1, KERNEL, 1, 1)?;
        let down = ConvGeometry::new([WIDTH_1, height, width], WIDTH_2, KERNEL, 2, 1)?;
        let res2 = ConvGeometry::new(
            [WIDTH_2, down.out_height, down.out_width],
            WIDTH_2,
            KERNEL,
            1,
            1,
        )?;
        Ok(Self {
            stem,
            res1,
            down,
            res2,
        })
    }
}

/// `N` consecutive gradient slots starting at `first`, borrowed mutably.
fn slots_mut<const N: usize>(grads: &mut [Vec<f64>], first: usize) -> [&mut [f64]; N] {
    let mut iter = grads[first..first + N].iter_mut().map(|v| v.as_mut_slice());
    std::array::from_fn(|_| iter.next().expect("slot in range"))
}

/// Activations of one sample kept for the backward pass.
struct Trace<T> {
    a1: Vec<T>,
    r1: Vec<T>,
    a2: Vec<T>,
    a3: Vec<T>,
    r2: Vec<T>,
    a4: Vec<T>,
    pooled: Vec<f64>,
    logit: f64,
}

fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::ZERO {
            *x = T::ZERO;
        }
    }
}

fn mask_by_positive<T: Real>(grad: &mut [T], act: &[T]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if a <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

/// `out = relu(x + conv2(relu(conv1(x))))`; returns `(inner, out)`.
pub(crate) fn residual_forward<T: Real>(
    x: &[T],
    w1: (&[T], &[T]),
    w2: (&[T], &[T]),
    g: &ConvGeometry,
    scratch: &mut ConvScratch<T>,
) -> (Vec<T>, Vec<T>) {
    let mut inner = vec![T::ZERO; g.out_len()];
    forward_sample(x, w1.0, w1.1, g, scratch, &mut inner);
    relu_in_place(&mut inner);
    let mut out = vec![T::ZERO; g.out_len()];
    forward_sample(&inner, w2.0, w2.1, g, scratch, &mut out);
    for (o, &xi) in out.iter_mut().zip(x) {
        *o += xi;
    }
    relu_in_place(&mut out);
    (inner, out)
}

/// Backward through [`residual_forward`]; returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn residual_backward<T: Real>(
    x: &[T],
    inner: &[T],
    out: &[T],
    dout: &[T],
    w1: &[T],
    w2: &[T],
    g: &ConvGeometry,
    scratch: &mut ConvScratch<T>,
    grads1: (&mut [f64], &mut [f64]),
    grads2: (&mut [f64], &mut [f64]),
) -> Vec<T> {
    let mut dsum = dout.to_vec();
    mask_by_positive(&mut dsum, out);
    let mut dinner = vec![T::ZERO; g.out_len()];
    backward_sample(inner, w2, &dsum, g, scratch, grads2.0, grads2.1, Some(&mut dinner));
    mask_by_positive(&mut dinner, inner);
    let mut dx = dsum;
    backward_sample(x, w1, &dinner, g, scratch, grads1.0, grads1.1, Some(&mut dx));
    dx
}

/// Residual convolutional binary classifier over `3 × H × W` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel<T = f32> {
    params: Vec<Param<T>>,
}

impl<T: Real> DetectorModel<T> {
    /// Seeded initialization: conv weights uniform in `±1/√fan-in`, conv
    /// biases zero, final affine zero so the initial probability is 0.5.
    pub fn init(seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, &[seed::hash_str("detector-init")]));
        let params = parameter_layout()
            .into_iter()
            .map(|(name, dims)| {
                let mut p = Param::zeros(name, &dims);
                if dims.len() == 4 {
                    let bound = 1.0 / ((dims[1] * dims[2] * dims[3]) as f64).sqrt();
                    for v in &mut p.data {
                        *v = T::from_f64(rng.gen_range(-bound..=bound));
                    }
                }
                p
            })
            .collect();
        Self { params }
    }

    /// Builds a model from externally supplied parameters, checking names and
    /// shapes against the fixed layout.
    pub fn from_params(params: Vec<Param<T>>) -> Result<Self> {
        let layout = parameter_layout();
        if params.len() != layout.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for (p, (name, dims)) in params.iter().zip(&layout) {
            if p.name != *name || p.dims != *dims || p.data.len() != dims.iter().product::<usize>() {
                return Err(Error::Format(format!(
                    "parameter {} {:?} does not match architecture slot {name} {dims:?}",
                    p.name, p.dims
                )));
            }
            if p.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {}", p.name)));
            }
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn cast<U: Real>(&self) -> DetectorModel<U> {
        DetectorModel {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    data: p.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
        }
    }

    fn w(&self, idx: usize) -> (&[T], &[T]) {
        (&self.params[idx].data, &self.params[idx + 1].data)
    }

    fn check_input(batch: &Tensor4<T>) -> Result<Geometries> {
        let [n, c, h, w] = batch.dims();
        if c != INPUT_CHANNELS {
            return Err(Error::Shape(format!(
                "detector expects {INPUT_CHANNELS} input channels, got {c}"
            )));
        }
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Geometries::new(h, w)
    }

    fn trace(&self, x: &[T], g: &Geometries, scratch: &mut ConvScratch<T>) -> Trace<T> {
        let (sw, sb) = self.w(STEM_W);
        let mut a1 = vec![T::ZERO; g.stem.out_len()];
        forward_sample(x, sw, sb, &g.stem, scratch, &mut a1);
        relu_in_place(&mut a1);

        let (r1, a2) = residual_forward(&a1, self.w(RES1_W1), self.w(RES1_W2), &g.res1, scratch);

        let (dw, db) = self.w(DOWN_W);
        let mut a3 = vec![T::ZERO; g.down.out_len()];
        forward_sample(&a2, dw, db, &g.down, scratch, &mut a3);
        relu_in_place(&mut a3);

        let (r2, a4) = residual_forward(&a3, self.w(RES2_W1), self.w(RES2_W2), &g.res2, scratch);

        let np = g.res2.out_pixels();
        let pooled: Vec<f64> = a4.chunks_exact(np).map(|c| sum_f64(c) / np as f64).collect();
        let head = &self.params[HEAD_W].data;
        let logit = self.params[HEAD_B].data[0].to_f64()
            + pooled.iter().zip(head).map(|(p, w)| p * w.to_f64()).sum::<f64>();
        Trace {
            a1,
            r1,
            a2,
            a3,
            r2,
            a4,
            pooled,
            logit,
        }
    }

    fn backprop(
        &self,
        x: &[T],
        t: &Trace<T>,
        dlogit: f64,
        g: &Geometries,
        scratch: &mut ConvScratch<T>,
    ) -> Gradients {
        let mut grads = Gradients::zeros_like(&self.params);
        let gr = &mut grads.grads;
        for (gw, p) in gr[HEAD_W].iter_mut().zip(&t.pooled) {
            *gw = dlogit * p;
        }
        gr[HEAD_B][0] = dlogit;

        let np = g.res2.out_pixels();
        let mut da4 = vec![T::ZERO; g.res2.out_len()];
        for (c, w) in self.params[HEAD_W].data.iter().enumerate() {
            let v = T::from_f64(dlogit * w.to_f64() / np as f64);
            da4[c * np..(c + 1) * np].fill(v);
        }

        let [w1, b1, w2, b2] = slots_mut::<4>(gr, RES2_W1);
        let mut da3 = residual_backward(
            &t.a3,
            &t.r2,
            &t.a4,
            &da4,
            &self.params[RES2_W1].data,
            &self.params[RES2_W2].data,
            &g.res2,
            scratch,
            (w1, b1),
            (w2, b2),
        );
        mask_by_positive(&mut da3, &t.a3);

        let mut da2 = vec![T::ZERO; g.down.in_len()];
        let [dw, db] = slots_mut::<2>(gr, DOWN_W);
        backward_sample(
            &t.a2,
            &self.params[DOWN_W].data,
            &da3,
            &g.down,
            scratch,
            dw,
            db,
            Some(&mut da2),
        );

        let [w1, b1, w2, b2] = slots_mut::<4>(gr, RES1_W1);
        let mut da1 = residual_backward(
            &t.a1,
            &t.r1,
            &t.a2,
            &da2,
            &self.params[RES1_W1].data,
            &self.params[RES1_W2].data,
            &g.res1,
            scratch,
            (w1, b1),
            (w2, b2),
        );
        mask_by_positive(&mut da1, &t.a1);

        let [sw, sb] = slots_mut::<2>(gr, STEM_W);
        backward_sample(x, &self.params[STEM_W].data, &da1, &g.stem, scratch, sw, sb, None);
        grads
    }

    /// Logits for every sample in the batch, in batch order.
    pub fn forward(&self, batch: &Tensor4<T>) -> Result<Vec<T>> {
        Ok(self.forward_f64(batch)?.into_iter().map(T::from_f64).collect())
    }

    pub(crate) fn forward_f64(&self, batch: &Tensor4<T>) -> Result<Vec<f64>> {
        let g = Self::check_input(batch)?;
        let logits: Vec<f64> = (0..batch.batch())
            .into_par_iter()
            .map_init(ConvScratch::new, |scratch, i| {
                self.trace(batch.sample(i), &g, scratch).logit
            })
            .collect();
        if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logit of sample {i}")));
        }
        Ok(logits)
    }

    /// Mean binary cross-entropy of the batch.
    pub fn loss(&self, batch: &Tensor4<T>, labels: &[u8]) -> Result<f64> {
        let logits = self.forward_f64(batch)?;
        Ok(bce_loss(&logits, labels)?.loss)
    }

    /// Mean BCE and its exact gradient with respect to every parameter.
    ///
    /// Per-sample gradients are computed independently and summed in batch
    /// order, so the result does not depend on the thread count.
    pub fn backward(&self, batch: &Tensor4<T>, labels: &[u8]) -> Result<(f64, Gradients)> {
        let g = Self::check_input(batch)?;
        if labels.len() != batch.batch() {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                batch.batch()
            )));
        }
        let traces: Vec<Trace<T>> = (0..batch.batch())
            .into_par_iter()
            .map_init(ConvScratch::new, |scratch, i| self.trace(batch.sample(i), &g, scratch))
            .collect();
        let logits: Vec<f64> = traces.iter().map(|t| t.logit).collect();
        if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logit of sample {i}")));
        }
        let bce = bce_loss(&logits, labels)?;
        let per_sample: Vec<Gradients> = traces
            .par_iter()
            .enumerate()
            .map_init(ConvScratch::new, |scratch, (i, t)| {
                self.backprop(batch.sample(i), t, bce.grad[i], &g, scratch)
            })
            .collect();
        let mut total = Gradients::zeros_like(&self.params);
        for gsample in &per_sample {
            total.add_assign(gsample);
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        Ok((bce.loss, total))
    }
}
