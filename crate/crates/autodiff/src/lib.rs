//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The layer set is deliberately narrow: convolutions (1-D and 2-D), dense
//! layers, a fused GRU, max pooling, batch normalization, and the losses the
//! replay detectors train with. Everything runs on the CPU.

pub mod center;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tensor;

pub use center::update_centers;
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use graph::{BatchNormParams, Graph, GruParams, Var};
pub use init::he_normal;
pub use optim::{AmsGrad, AmsGradConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
