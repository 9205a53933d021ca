//! Scale-invariant simplex-target classification on top of a complex-valued
//! convolutional feature generator, trained end to end by minibatched SGD.
//!
//! The crate is generic over the floating-point scalar (see [`scalar::Real`]);
//! the aliases below fix the default double-precision instantiation.

pub mod convnet;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod logistic;
pub mod rng;
pub mod scalar;
pub mod simplex;
pub mod stage;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::{real, Real};

/// Double-precision aliases: the reference instantiation used by the CLI and
/// the test suites.
pub type Tensor = tensor::Tensor<f64>;
pub type ComplexImage = tensor::ComplexImage<f64>;
pub type Image = tensor::Image<f64>;

/// Single-precision variants.
pub type Tensor32 = tensor::Tensor<f32>;
pub type ComplexImage32 = tensor::ComplexImage<f32>;
pub type Image32 = tensor::Image<f32>;
