//! Flow sampling: learning diffusion samplers for unnormalized densities by
//! regressing a drift network onto conditional denoising targets, with the
//! target score evaluated once per explored endpoint.
//!
//! The crate covers Euclidean space and constant-curvature manifolds
//! (sphere, hyperboloid): geometry primitives, the conditional drift targets,
//! built-in energy targets, an Euler-Maruyama solver, the replay-buffer
//! training loop, evaluation metrics, and a numerical verification suite.

pub mod config;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod net;
pub mod process;
pub mod rng;
pub mod sde;
pub mod targets;
pub mod trainer;
pub mod vecmath;
pub mod verify;

pub use error::{FsError, Result};
