//! Lidar point-cloud SLAM built on regionalized Gaussian-process surface maps.
//!
//! The world is partitioned into cubic cells. In every cell, up to three GP
//! regressions (one per coordinate direction) recover the local surface and
//! emit evenly spaced samples with predictive mean and variance. Those samples
//! drive scan-to-map registration (variance-weighted least squares) and
//! incremental map fusion (recursive inverse-variance updates). A core
//! per-frame workflow and an optional lower-frequency refinement pass produce
//! the odometry trajectory and the final map.
//!
//! Coordinate convention: right-handed, z-up world frame.

pub mod config;
pub mod error;
pub mod geometry;
pub mod gp;
pub mod grid;
pub mod mapstore;
pub mod pipeline;
pub mod registration;
pub mod toolkit;

pub use error::{Error, Result};
pub use geometry::{Direction, Point3, PointCloud, PoseSE3};
pub use grid::{CellBucket, CellIndex, GridConfig, TestLattice};
pub use gp::{KernelConfig, Layer, Sample};
pub use mapstore::GPMap;
pub use registration::{Correspondence, MatchConfig};
