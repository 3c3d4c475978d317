//! Minimal dense-tensor neural-network engine.
//!
//! Layers cache what their backward pass needs during `forward` and expose an
//! allocation-only `infer` path for evaluation. Everything is generic over the
//! element type so the same code runs in `f32` for training and in `f64` for
//! finite-difference gradient checks.

pub mod activation;
pub mod checkpoint;
pub mod conv;
pub mod dropout;
mod error;
pub mod gradcheck;
pub mod gru;
pub mod layer;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod optim;
mod param;
pub mod pool;
pub mod residual;
mod scalar;
mod tensor;

pub use activation::{Activation, ActivationKind};
pub use conv::Conv2d;
pub use dropout::Dropout;
pub use error::{NnError, Result};
pub use gru::{BiGru, Direction, GruState, GruWeights};
pub use layer::{Flatten, Layer, Sequential};
pub use linear::Linear;
pub use norm::BatchNorm;
pub use optim::{Adam, AdamConfig, Optimizer, Sgd};
pub use param::{Mode, Parameter};
pub use pool::{AdaptiveMaxPool1x1, GlobalAvgPool, MaxPool2d};
pub use residual::BasicBlock;
pub use scalar::{gemm, MatMut, MatRef, Scalar};
pub use tensor::Tensor;
