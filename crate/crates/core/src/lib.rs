//! CPU reference implementation of a guided-prior network that jointly
//! super-resolves SDR video frames and expands them to HDR (BT.2020 / PQ),
//! together with the classical image operators, colorimetry, data
//! synthesis, metrics and training loop needed to reproduce its results.
//!
//! Everything is deterministic: fixed reduction orders, explicit RNG
//! streams, and byte-stable file formats.

pub mod error;
pub mod color;
pub mod image_ops;
pub mod io;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
