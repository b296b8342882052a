use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// First element; the value of a scalar tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, factor: f64) {
        for a in &mut self.data {
            *a *= factor;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Extents of a rank-4 `H×W×T×C` volume.
    pub fn volume_dims(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [h, w, t, c] => Ok([h, w, t, c]),
            _ => Err(Error::InvalidShape {
                op: "volume",
                detail: alloc::format!("expected rank-4 H×W×T×C tensor, got {:?}", self.shape),
            }),
        }
    }

    /// Copies the sub-volume starting at `origin` with extents `size` (all channels).
    pub fn sub_volume(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Tensor> {
        let [h, w, t, c] = self.volume_dims()?;
        let ext = [h, w, t];
        for a in 0..3 {
            if origin[a] + size[a] > ext[a] {
                return Err(Error::InvalidShape {
                    op: "sub_volume",
                    detail: alloc::format!(
                        "origin {:?} + size {:?} exceeds extents {:?}",
                        origin,
                        size,
                        ext
                    ),
                });
            }
        }
        let mut data = Vec::with_capacity(size[0] * size[1] * size[2] * c);
        for i in 0..size[0] {
            for j in 0..size[1] {
                let row = ((origin[0] + i) * w + origin[1] + j) * t + origin[2];
                data.extend_from_slice(&self.data[row * c..(row + size[2]) * c]);
            }
        }
        Ok(Tensor {
            shape: vec![size[0], size[1], size[2], c],
            data,
        })
    }

    /// Average-pools a volume by an integer factor per axis (floor on ragged edges).
    pub fn downscale(&self, factor: [usize; 3]) -> Result<Tensor> {
        let [h, w, t, c] = self.volume_dims()?;
        let out = [h / factor[0], w / factor[1], t / factor[2]];
        if out.contains(&0) {
            return Err(Error::InvalidShape {
                op: "downscale",
                detail: alloc::format!("factor {:?} too large for {:?}", factor, [h, w, t]),
            });
        }
        let norm = 1.0 / (factor[0] * factor[1] * factor[2]) as f64;
        let mut result = Tensor::zeros(&[out[0], out[1], out[2], c]);
        for i in 0..out[0] * factor[0] {
            for j in 0..out[1] * factor[1] {
                for k in 0..out[2] * factor[2] {
                    let src = ((i * w + j) * t + k) * c;
                    let dst = (((i / factor[0]) * out[1] + j / factor[1]) * out[2] + k / factor[2]) * c;
                    for ch in 0..c {
                        result.data[dst + ch] += self.data[src + ch] * norm;
                    }
                }
            }
        }
        Ok(result)
    }
}
