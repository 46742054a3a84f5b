//! Dense row-major tensors and the reverse-mode graph built on top of them.
//!
//! Feature maps are laid out `H x W x C`. Every differentiable operator lives
//! on [`Graph`]; the plain-tensor kernels they wrap are exported as free
//! functions so they can be used (and tested) without a tape.

mod conv;
mod elementwise;
mod gradcheck;
mod graph;
mod linalg;
mod norm;
mod sample;
mod window;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

pub use conv::{conv2d, depthwise_conv2d};
pub use gradcheck::{grad_check, grad_check_report, GradCheckReport, TensorCheck};
pub use graph::{Grads, Graph, Var};
pub use linalg::linear;
pub use norm::{layer_norm, softmax_lastdim};
pub use sample::bilinear_sample;
pub use window::{
    relative_position_index, shifted_window_mask, window_partition, window_reverse, WindowGrid,
};

/// Floating point element type. Implemented for `f32` (training and
/// inference) and `f64` (gradient checking).
pub trait Real:
    Float + Default + Debug + Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} hold {n} elements but {} values were given",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; n],
            requires_grad: false,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Size of the trailing dimension (channels for feature maps).
    pub fn last_dim(&self) -> usize {
        self.dims.last().copied().unwrap_or(1)
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.dims.len());
        let mut flat = 0;
        for (i, d) in index.iter().zip(&self.dims) {
            flat = flat * d + i;
        }
        self.data[flat]
    }

    /// Copies channels `[start, start + len)` of a `... x C` tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let c = self.last_dim();
        if start + len > c {
            return Err(Error::shape(format!(
                "channel slice {start}..{} out of range for {c} channels",
                start + len
            )));
        }
        let rows = self.numel() / c.max(1);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&self.data[r * c + start..r * c + start + len]);
        }
        let mut dims = self.dims.clone();
        *dims.last_mut().unwrap() = len;
        Tensor::new(dims, data)
    }

    /// Concatenates `... x C_k` tensors along the trailing dimension.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let lead = &first.dims[..first.dims.len() - 1];
        for p in parts {
            if &p.dims[..p.dims.len() - 1] != lead {
                return Err(Error::shape(format!(
                    "concat leading dims differ: {:?} vs {:?}",
                    first.dims, p.dims
                )));
            }
        }
        let rows: usize = lead.iter().product();
        let total: usize = parts.iter().map(|p| p.last_dim()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let c = p.last_dim();
                data.extend_from_slice(&p.data[r * c..(r + 1) * c]);
            }
        }
        let mut dims = lead.to_vec();
        dims.push(total);
        Tensor::new(dims, data)
    }

    /// Crops a `H x W x C` map to the window starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        let (h, w, c) = hwc(self)?;
        if top + height > h || left + width > w {
            return Err(Error::shape(format!(
                "crop {height}x{width}@({top},{left}) exceeds {h}x{w}"
            )));
        }
        let mut data = Vec::with_capacity(height * width * c);
        for y in top..top + height {
            let row = (y * w + left) * c;
            data.extend_from_slice(&self.data[row..row + width * c]);
        }
        Tensor::new(vec![height, width, c], data)
    }
}

/// Splits the dims of a rank-3 feature map.
pub(crate) fn hwc<T>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match t.dims.as_slice() {
        &[h, w, c] => Ok((h, w, c)),
        d => Err(Error::shape(format!("expected H x W x C, got {d:?}"))),
    }
}
