//! Data-driven small-signal modeling of multi-machine power grids.
//!
//! The pipeline: simulate ground-truth trajectories around randomized
//! operating points (`grid`), learn per-device linear state-space models
//! whose matrices are emitted by small neural networks conditioned on the
//! operating point (`model`), fuse them with a learned network matrix into
//! one global state matrix, train the whole thing with a staged curriculum
//! (`train`), and evaluate eigenstructure recovery (`analysis`).

pub mod adam;
pub mod eig;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod ode;
pub mod tape;
pub mod tensor;

pub mod analysis;
pub mod fusion;
pub mod grid;
pub mod model;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
