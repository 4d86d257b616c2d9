//! Antipodal grasp detection for parallel-jaw hands in 3D point clouds.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod cloud;
pub mod error;
pub mod features;
pub mod handgeom;
pub mod io;
pub mod labeler;
pub mod pipeline;
pub mod sampler;
pub mod seed;
pub mod selection;
pub mod surface;
pub mod synth;

pub use error::{Error, Result};
