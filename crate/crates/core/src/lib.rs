//! Decentralized center-of-contact estimation with neural cellular automata.
//!
//! A grid of identical agents, one per tactile sensor, each sees its own
//! reading and its Moore neighborhood. A shared, trained update rule lets the
//! agents agree on the geometric center of an object resting on the grid.
//!
//! The crate is layered bottom-up:
//!
//! - [`nn`]: `f64` convolution, ReLU, Sobel, Adam, gradient checking
//! - [`grid`]: agent channel layout and the consensus readout
//! - [`nca`]: the update rule, asynchronous rollouts, backprop through time
//! - [`world`]: synthetic objects, rasterized readings, faults, noise, calibration
//! - [`training`]: pool-based training, evaluation, checkpoints
//! - [`baseline`]: a centralized CNN regressor for comparison
//! - [`experiments`]: seeded sweeps, statistics, CSV/SVG output

pub mod baseline;
pub mod error;
pub mod experiments;
pub mod geom;
pub mod grid;
pub mod nca;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod training;
pub mod world;

pub use error::{Error, Result};
pub use geom::Point2;
pub use grid::{init_grid, ChannelLayout, Readings, StateGrid};
pub use nca::{NcaModel, RolloutConfig};
pub use nn::Tensor3;
