//! Synthetic test environment for the traversability pipeline.
//!
//! A world is a piecewise-planar ground with rigid trunks and permeable
//! vegetation clusters. A scripted robot drives through it, a two-return
//! lidar scans it, and contact with rigid geometry produces collision
//! events. Everything is deterministic per seed.

pub mod episode;
pub mod error;
pub mod lidar;
pub mod robot;
pub mod world;

pub use episode::{
    coverage_script, default_holdout, read_episode, run_episode, write_episode, Behavior, CoverageConfig,
    EpisodeConfig, EpisodeLog, Leg, OperatorScript, Record, Scan,
};
pub use error::{Result, SimError};
pub use lidar::{simulate_scan, LidarConfig};
pub use robot::{step_robot, Command, RobotState};
pub use world::{generate_world, World, WorldConfig};
