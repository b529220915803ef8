pub mod audio;
pub mod config;
pub mod error;
pub mod features;
pub mod ivector;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod runtime;
pub mod systems;

pub use error::{Error, ErrorCategory, Result};
pub mod training;
