//! Exact sampling of locally stable spatial point processes by dominated
//! coupling from the past, with the multiscale area-interaction model,
//! summary-statistic envelopes and maximum pseudo-likelihood fitting.

pub mod cftp;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod models;
pub mod rng;
pub mod stats;

pub use cftp::{perfect_sample, CftpError, CftpResult, Schedule};
pub use geometry::{AreaGrid, Boundary, Grain, Point, PointId, PointPattern, Window};
pub use models::{ModelConfig, MultiscaleModel, ScaleTerm};
pub use rng::SeedPath;
