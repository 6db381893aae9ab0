//! Progressive alternating attention segmentation network.
//!
//! The crate carries its own small reverse-mode tensor core ([`tensor`]), the
//! network ([`model`]), losses/optimizer/checkpoints ([`training`]),
//! evaluation metrics ([`metrics`]) and a synthetic dataset pipeline
//! ([`data`]). Numeric code is generic over [`Scalar`]; the aliases below fix
//! the `f32` types used for training and the `f64` ones used for tight
//! gradient checks.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
