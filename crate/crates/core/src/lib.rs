//! Wireless spatial-spectrum reconstruction with deformable 2D Gaussian
//! splatting.
//!
//! The crate is organised bottom-up:
//!
//! * [`spectrum`] – angular grids, complex spectra and quality metrics.
//! * [`wavesim`] – array geometry, mirror-source multipath tracing, beam
//!   scanning and the on-disk dataset format.
//! * [`splat`] – the 2D Gaussian primitive set and the tile-parallel
//!   differentiable rasterizer.
//! * [`deform`] – positional encoding, the deformation MLP and the
//!   position-noise annealing schedule.
//! * [`training`] – hybrid loss, Adam, the coarse/fine protocol, evaluation
//!   and checkpoints.
//! * [`tasks`] – RSSI regression and peak-based AoA heads.

pub mod deform;
pub mod error;
pub mod real;
pub mod spectrum;
pub mod splat;
pub mod tasks;
pub mod training;
pub mod wavesim;

pub use error::{Result, WrfError};
pub use real::Real;
