//! Traffic forecasting on a joint spatial-temporal graph with inferred edge
//! weights, dilated causal convolutions and multi-view fusion.
//!
//! Numerics are generic over [`Scalar`]; the aliases below fix the two
//! supported precisions.

pub mod config;
pub mod data;
pub mod encodings;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod local;
pub mod model;
pub mod mvc;
pub mod scalar;
pub mod stei;
pub mod tdcn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::{ParamRegistry, Tape, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
