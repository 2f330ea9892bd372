//! Joint deformable alignment and low-rank frontal appearance recovery.
//!
//! A warped image `x(p)` is explained as a clean texture from a learned
//! orthonormal subspace plus a sparse error, while the warp parameters `p`
//! are refined through a linearized constraint. The inner problem is
//! nuclear norm plus weighted l1 under two equality constraints, solved
//! with an alternating-directions augmented Lagrangian method.

pub mod error;
pub mod evalkit;
pub mod numlin;
pub mod shapewarp;
pub mod solver;
pub mod subspace;
pub mod synth;

pub use error::{Error, Result};
pub use numlin::{Matrix, Vector};
