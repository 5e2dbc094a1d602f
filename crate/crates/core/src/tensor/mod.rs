//! Dense row-major tensors and the handful of shaped kernels the encoder needs.
//!
//! Every operation here is a pure function over [`Tensor`] values with a
//! matching hand-written backward. There is no autograd tape; the model
//! composes these adjoints explicitly.

mod affine;
mod conv;
mod gradcheck;
mod pad;
mod pool;

pub use affine::{affine, affine_backward, AffineGrads};
pub use conv::{conv3d_backward, conv3d_valid, ConvGrads};
pub use gradcheck::finite_diff_check;
pub use pad::{
    circular_pad_hw, pad_hw, pad_hw_backward, reshape_2d, zero_pad_hw, PaddingMode,
};
pub use pool::{maxpool_channels, maxpool_channels_backward, Pooled};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

/// Floating point element type. Training runs in `f32`, gradient checks in `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to every float type")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("kernel {kernel:?} exceeds input {input:?}")]
    KernelExceedsInput { kernel: Vec<usize>, input: Vec<usize> },
    #[error("channel count {channels} is not divisible by pool window {window}")]
    NonDivisibleChannels { channels: usize, window: usize },
    #[error("invalid convolution spec: {0}")]
    InvalidConvSpec(String),
    #[error("non-finite function value at coordinate {coordinate}")]
    NonFinite { coordinate: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DimensionMismatch(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// 1-D tensor owning `data`.
    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for axis in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.shape[axis + 1];
        }
        strides
    }

    /// Row-major flat offset of a multi-index. Panics on out-of-range indices.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (axis, (&i, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(i < dim, "index {i} out of range on axis {axis} (dim {dim})");
            off = off * dim + i;
        }
        off
    }

    /// Inverse of [`Tensor::offset`].
    pub fn unravel(&self, mut offset: usize) -> Vec<usize> {
        let mut index = vec![0; self.shape.len()];
        for axis in (0..self.shape.len()).rev() {
            index[axis] = offset % self.shape[axis];
            offset /= self.shape[axis];
        }
        index
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::DimensionMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn flatten(self) -> Self {
        let n = self.data.len();
        Self {
            shape: vec![n],
            data: self.data,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows of a rank-2 tensor as slices.
    pub fn row(&self, r: usize) -> &[T] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let cols = self.shape[self.shape.len() - 1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub(crate) fn debug_assert_finite(&self) {
        debug_assert!(self.is_finite(), "non-finite value in tensor {:?}", self.shape);
    }
}

/// Geometry of one 3D convolution stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_hw: usize,
    pub pad: usize,
    pub kernel_depth: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Builds a spec from the padding size; the kernel side is always `2 * pad + 1`.
    pub fn from_pad(pad: usize, kernel_depth: usize, out_channels: usize) -> Result<Self> {
        Self {
            kernel_hw: 2 * pad + 1,
            pad,
            kernel_depth,
            out_channels,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.kernel_hw != 2 * self.pad + 1 {
            return Err(TensorError::InvalidConvSpec(format!(
                "kernel size {} must equal 2 * pad + 1 = {}",
                self.kernel_hw,
                2 * self.pad + 1
            )));
        }
        if self.kernel_depth == 0 {
            return Err(TensorError::InvalidConvSpec("kernel depth must be >= 1".into()));
        }
        if self.out_channels == 0 {
            return Err(TensorError::InvalidConvSpec("need at least one output channel".into()));
        }
        Ok(self)
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.kernel_hw,
            self.kernel_hw,
            self.kernel_depth,
        ]
    }
}
