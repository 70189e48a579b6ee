//! File formats and dataset plumbing: the YUV frame container, the named
//! tensor container for weights and checkpoints, synthetic scene generation
//! with its paired degradation, manifests, patch sampling, and PPM dumps.

mod dataset;
mod ppm;
mod scene;
mod weights;
mod yuv;

pub use dataset::*;
pub use ppm::*;
pub use scene::*;
pub use weights::*;
pub use yuv::*;
