//! Zero-padded 2-D cross-correlation via im2col.
//!
//! Column rows are indexed `(c · k + ky) · k + kx`, columns by output pixel,
//! so the forward pass is a row-wise axpy over contiguous memory. Weight
//! gradients reduce one sample's output pixels in sixteen fixed lanes and add
//! the result into `f64` accumulators; bias gradients reduce in `f64`.
//!
//! On x86-64 the per-sample kernels are also compiled with AVX2 and picked
//! at runtime. Every reduction has a fixed order, so both builds produce the
//! same bits.

use super::real::Real;
use super::tensor::Tensor4;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(
        in_chw: [usize; 3],
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [in_channels, in_height, in_width] = in_chw;
        if kernel % 2 == 0 || kernel == 0 {
            return Err(Error::Shape(format!("kernel size must be odd, got {kernel}")));
        }
        if stride == 0 {
            return Err(Error::Shape("stride must be at least 1".into()));
        }
        let span = |n: usize| (n + 2 * padding).checked_sub(kernel).map(|d| d / stride + 1);
        let (out_height, out_width) = match (span(in_height), span(in_width)) {
            (Some(h), Some(w)) if in_channels > 0 && out_channels > 0 => (h, w),
            _ => {
                return Err(Error::Shape(format!(
                    "{kernel}x{kernel} kernel does not fit {in_channels}x{in_height}x{in_width} input with padding {padding}"
                )))
            }
        };
        Ok(Self {
            in_channels,
            in_height,
            in_width,
            out_channels,
            kernel,
            stride,
            padding,
            out_height,
            out_width,
        })
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_pixels()
    }

    /// Rows of the column matrix, also the fan-in of one output unit.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }
}

#[inline(always)]
fn im2col<T: Real>(x: &[T], g: &ConvGeometry, col: &mut Vec<T>) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let (ih, iw) = (g.in_height as isize, g.in_width as isize);
    let np = g.out_pixels();
    col.clear();
    col.resize(g.patch_len() * np, T::ZERO);
    for c in 0..g.in_channels {
        let plane = &x[c * g.in_height * g.in_width..(c + 1) * g.in_height * g.in_width];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * np..][..np];
                for oy in 0..g.out_height {
                    let y = (oy * s + ky) as isize - p;
                    if y < 0 || y >= ih {
                        continue;
                    }
                    let src = &plane[y as usize * g.in_width..][..g.in_width];
                    let dst = &mut row[oy * g.out_width..][..g.out_width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let xx = (ox * s + kx) as isize - p;
                        if xx >= 0 && xx < iw {
                            *d = src[xx as usize];
                        }
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn col2im_add<T: Real>(col: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let (ih, iw) = (g.in_height as isize, g.in_width as isize);
    let np = g.out_pixels();
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.in_height * g.in_width..(c + 1) * g.in_height * g.in_width];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * np..][..np];
                for oy in 0..g.out_height {
                    let y = (oy * s + ky) as isize - p;
                    if y < 0 || y >= ih {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.in_width..][..g.in_width];
                    let src = &row[oy * g.out_width..][..g.out_width];
                    for (ox, &v) in src.iter().enumerate() {
                        let xx = (ox * s + kx) as isize - p;
                        if xx >= 0 && xx < iw {
                            dst[xx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Dot product over one sample's output pixels: sixteen independent lanes
/// in the element type, combined in a fixed order and returned as `f64`.
#[inline(always)]
pub(crate) fn dot_lanes<T: Real>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [T::ZERO; 16];
    let ca = a.chunks_exact(16);
    let cb = b.chunks_exact(16);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x.to_f64() * y.to_f64())
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..16 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut pairs = [0.0f64; 8];
    for i in 0..8 {
        pairs[i] = acc[i].to_f64() + acc[i + 8].to_f64();
    }
    ((pairs[0] + pairs[1]) + (pairs[2] + pairs[3])) + ((pairs[4] + pairs[5]) + (pairs[6] + pairs[7])) + tail
}

#[inline(always)]
pub(crate) fn sum_f64<T: Real>(a: &[T]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().map(|x| x.to_f64()).sum();
    for x in ca {
        for i in 0..8 {
            acc[i] += x[i].to_f64();
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Reusable im2col buffer.
#[derive(Debug, Default)]
pub struct ConvScratch<T> {
    col: Vec<T>,
    dcol: Vec<T>,
}

impl<T: Real> ConvScratch<T> {
    pub fn new() -> Self {
        Self {
            col: Vec::new(),
            dcol: Vec::new(),
        }
    }
}

/// Single-sample forward pass; `out` has `g.out_len()` elements.
pub(crate) fn forward_sample<T: Real>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    g: &ConvGeometry,
    scratch: &mut ConvScratch<T>,
    out: &mut [T],
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected at runtime.
        return unsafe { forward_avx2(x, weight, bias, g, scratch, out) };
    }
    forward_impl(x, weight, bias, g, scratch, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn forward_avx2<T: Real>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    g: &ConvGeometry,
    scratch: &mut ConvScratch<T>,
    out: &mut [T],
) {
    forward_impl(x, weight, bias, g, scratch, out)
}

#[inline(always)]
fn forward_impl<T: Real>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    g: &ConvGeometry,
    scratch: &mut ConvScratch<T>,
    out: &mut [T],
) {
    im2col(x, g, &mut scratch.col);
    let np = g.out_pixels();
    let pl = g.patch_len();
    for o in 0..g.out_channels {
        let dst = &mut out[o * np..(o + 1) * np];
        dst.fill(bias[o]);
        for (j, &w) in weight[o * pl..(o + 1) * pl].iter().enumerate() {
            if w == T::ZERO {
                continue;
            }
            let src = &scratch.col[j * np..(j + 1) * np];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
}

/// Single-sample backward pass.
///
/// Adds weight and bias gradients into the `f64` accumulators; when `dx` is
/// given, the input gradient is added into it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_sample<T: Real>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &ConvGeometry,
    scratch: &mut ConvScratch<T>,
    dweight: &mut [f64],
    dbias: &mut [f64],
    dx: Option<&mut [T]>,
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected at runtime.
        return unsafe { backward_avx2(x, weight, dy, g, scratch, dweight, dbias, dx) };
    }
    backward_impl(x, weight, dy, g, scratch, dweight, dbias, dx)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn backward_avx2<T: Real>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &ConvGeometry,
    scratch: &mut ConvScratch<T>,
    dweight: &mut [f64],
    dbias: &mut [f64],
    dx: Option<&mut [T]>,
) {
    backward_impl(x, weight, dy, g, scratch, dweight, dbias, dx)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn backward_impl<T: Real>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &ConvGeometry,
    scratch: &mut ConvScratch<T>,
    dweight: &mut [f64],
    dbias: &mut [f64],
    dx: Option<&mut [T]>,
) {
    im2col(x, g, &mut scratch.col);
    let np = g.out_pixels();
    let pl = g.patch_len();
    let oc = g.out_channels;
    for o in 0..oc {
        dbias[o] += sum_f64(&dy[o * np..(o + 1) * np]);
    }
    for o in 0..oc {
        let gy = &dy[o * np..(o + 1) * np];
        let dw = &mut dweight[o * pl..(o + 1) * pl];
        for (j, acc) in dw.iter_mut().enumerate() {
            *acc += dot_lanes(gy, &scratch.col[j * np..(j + 1) * np]);
        }
    }
    if let Some(dx) = dx {
        scratch.dcol.clear();
        scratch.dcol.resize(pl * np, T::ZERO);
        for o in 0..oc {
            let gy = &dy[o * np..(o + 1) * np];
            for (j, &w) in weight[o * pl..(o + 1) * pl].iter().enumerate() {
                if w == T::ZERO {
                    continue;
                }
                let dst = &mut scratch.dcol[j * np..(j + 1) * np];
                for (d, &v) in dst.iter_mut().zip(gy) {
                    *d += w * v;
                }
            }
        }
        col2im_add(&scratch.dcol, g, dx);
    }
}

fn check_weights<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let [_, c, h, w] = input.dims();
    let [o, wc, kh, kw] = weights.dims();
    if wc != c {
        return Err(Error::Shape(format!(
            "weights expect {wc} input channels, input has {c}"
        )));
    }
    if kh != kw {
        return Err(Error::Shape(format!("non-square kernel {kh}x{kw}")));
    }
    if bias.len() != o {
        return Err(Error::Shape(format!(
            "bias has {} entries for {o} output channels",
            bias.len()
        )));
    }
    ConvGeometry::new([c, h, w], o, kh, stride, padding)
}

/// Batched convolution: weights are `out × in × k × k`, output spatial size
/// is `⌊(in + 2·padding − k) / stride⌋ + 1`.
pub fn conv2d_forward<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<Tensor4<T>> {
    let g = check_weights(input, weights, bias, stride, padding)?;
    let n = input.batch();
    let mut out = Tensor4::zeros([n, g.out_channels, g.out_height, g.out_width]);
    let mut scratch = ConvScratch::new();
    let ol = g.out_len();
    for i in 0..n {
        forward_sample(
            input.sample(i),
            weights.data(),
            bias,
            &g,
            &mut scratch,
            &mut out.data_mut()[i * ol..(i + 1) * ol],
        );
    }
    Ok(out)
}

/// Gradients of a batched convolution given the output gradient.
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    grad_output: &Tensor4<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let bias = vec![T::ZERO; weights.dims()[0]];
    let g = check_weights(input, weights, &bias, stride, padding)?;
    let n = input.batch();
    if grad_output.dims() != [n, g.out_channels, g.out_height, g.out_width] {
        return Err(Error::Shape(format!(
            "output gradient {:?} does not match convolution output",
            grad_output.dims()
        )));
    }
    let mut dx = Tensor4::zeros(input.dims());
    let mut dw = vec![0.0; g.weight_len()];
    let mut db = vec![0.0; g.out_channels];
    let mut scratch = ConvScratch::new();
    let il = g.in_len();
    for i in 0..n {
        backward_sample(
            input.sample(i),
            weights.data(),
            grad_output.sample(i),
            &g,
            &mut scratch,
            &mut dw,
            &mut db,
            Some(&mut dx.data_mut()[i * il..(i + 1) * il]),
        );
    }
    Ok(ConvGrads {
        input: dx,
        weights: dw,
        bias: db,
    })
}
