//! Building blocks shared by the three encoders.

mod batchnorm;
mod dropout;
mod embedding;
mod stack;

pub use batchnorm::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, update_running_stats, BatchNormCache,
    BatchNormGrads, BN_EPSILON, BN_MOMENTUM,
};
pub use dropout::dropout;
pub use embedding::{embed_lookup, embed_scatter_add};
pub use stack::{
    alternate_mask_stack, stack_backward, stack_planes, standard_stack, MaskedTuple, PlaneSource,
    StackLayout,
};

use rand::Rng;
use thiserror::Error;

use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("id {id} out of range for table with {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },
    #[error("planes have mismatched shapes: {0}")]
    PlaneMismatch(String),
    #[error("stack needs at least one entity plane")]
    EmptyStack,
    #[error("batch normalization over an empty batch")]
    EmptyBatch,
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidDropout(f64),
    #[error("invalid masked tuple: {0}")]
    InvalidMask(String),
}

pub type Result<T> = std::result::Result<T, LayerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

/// Uniform draw in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given the forward *output*.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("relu shapes agree")
}
