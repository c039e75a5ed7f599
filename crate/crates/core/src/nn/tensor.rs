use super::real::Real;
use crate::error::{Error, Result};

/// Dense `batch × channels × height × width` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "tensor {dims:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor {dims:?}")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![T::ZERO; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for y in 0..dims[2] {
                    for x in 0..dims[3] {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    /// Stacks equally sized `C × H × W` samples into a batch.
    pub fn stack(chw: [usize; 3], samples: &[Vec<T>]) -> Result<Self> {
        let per = chw.iter().product::<usize>();
        let mut data = Vec::with_capacity(per * samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.len() != per {
                return Err(Error::Shape(format!(
                    "sample {i} has {} values, expected {per}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        Self::new([samples.len(), chw[0], chw[1], chw[2]], data)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let per = self.sample_len();
        &self.data[n * per..(n + 1) * per]
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> T {
        let [_, c, h, w] = self.dims;
        self.data[((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]]
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Samples reordered by `order`.
    pub fn select(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(order.len() * self.sample_len());
        for &i in order {
            data.extend_from_slice(self.sample(i));
        }
        Self {
            dims: [order.len(), self.dims[1], self.dims[2], self.dims[3]],
            data,
        }
    }
}
