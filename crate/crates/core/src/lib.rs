// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod autodiff;
pub mod bias;
pub mod corpus;
pub mod debias;
pub mod error;
pub mod lab;
pub mod model;
pub mod report;
pub mod scalar;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Single-precision aliases used by the command-line tool.
pub type Tensor32 = Tensor<f32>;
pub type Model32 = model::Model<f32>;
pub type HeadMaskGrid32 = model::HeadMaskGrid<f32>;
pub type BiasScoreMap32 = bias::BiasScoreMap<f32>;
pub type EmbeddingBank32 = bias::EmbeddingBank<f32>;

/// Double-precision aliases, used for finite-difference references.
pub type Tensor64 = Tensor<f64>;
pub type Model64 = model::Model<f64>;
