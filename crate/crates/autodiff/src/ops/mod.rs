pub mod conv;
pub mod gemm;
pub mod gru;
pub mod norm;
pub mod pool;

pub use conv::{ceil_mode_padding, out_len, ConvGeom};
