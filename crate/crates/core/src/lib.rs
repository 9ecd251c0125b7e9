//! Miniature cloth simulation with learned patch upscaling.
//!
//! A full-resolution ("target") grid cloth is approximated by simulating a
//! down-sampled, down-scaled ("miniature") copy and lifting every miniature
//! frame back to target resolution with a small fully connected network that
//! works one 2x2 miniature cell at a time. Ground-truth simulation,
//! interpolation baselines and an error/timing harness live alongside.

pub mod cloth;
pub mod dsds;
pub mod error;
pub mod eval;
pub mod frames;
mod io_util;
pub mod linalg;
pub mod mlp;
pub mod obj;
pub mod patches;
pub mod pipeline;
pub mod scene;
pub mod solver;
pub mod upscale;

pub use error::{Error, Result};

/// World-space 3-vector used for positions, velocities and forces.
pub type Vec3 = nalgebra::Vector3<f64>;
