//! Data ingestion, synthetic scene generation and evaluation metrics.

pub mod eval;
pub mod io;
pub mod synth;

pub use eval::{closest_point_rmse, mean_map_entropy, trajectory_error, TrajReport};
pub use io::{load_cloud, load_trajectory, save_cloud, save_trajectory, LoadedCloud};
pub use synth::{PathPose, Primitive, SceneSpec};
