//! Differentiable numerical primitives.
//!
//! Every operation comes as a forward function plus a hand-derived backward
//! function. All of them are generic over [`Scalar`] so that training runs in
//! `f32` while the finite-difference harness in [`gradcheck`] re-evaluates the
//! same code paths in `f64`.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod gaussian;
pub mod gradcheck;
pub mod softmax;

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

pub use activation::{dropout, dropout_backward, relu, relu_backward, relu_dropout_backward};
pub use adam::{Adam, AdamConfig};
pub use batchnorm::{BatchNormCache, BatchStats, RunningStats};
pub use conv::{conv2d, conv2d_backward, conv2d_transpose, conv2d_transpose_backward, Padding};
pub use dense::{dense, dense_backward};
pub use gaussian::{kl_standard_normal, reparameterize};
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use softmax::{argmax_rows, log_softmax, softmax_xent, softmax_xent_backward};

/// Floating point element type used throughout the networks.
pub trait Scalar:
    LinalgScalar
    + Float
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;

/// Whether stochastic layers and batch statistics are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(DiffError::Shape(msg.into()))
}
