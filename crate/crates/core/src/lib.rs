//! Multi-exposure HDR deghosting: a small reverse-mode tensor engine, the
//! alignment and fusion network, metrics, a synthetic scene generator and
//! the training/inference pipeline.

pub mod datagen;
pub mod error;
pub mod hdr;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
