//! Online-adaptive traversability estimation for dense vegetation.
//!
//! The crate is generic over the scalar type ([`Real`], implemented for
//! `f32` and `f64`). Concrete aliases for both precisions live at the crate
//! root.

pub mod adaptation;
pub mod collision_map;
pub mod costmap;
pub mod error;
pub mod experience_graph;
pub mod metrics;
pub mod real;
pub mod te_model;
pub mod voxel_map;

pub use error::{Error, Result};
pub use real::{log_odds, logistic, Real};
pub use real::Vec3;

/// Double-precision aliases.
pub type VoxelMap64 = voxel_map::VoxelMap<f64>;
pub type CollisionMap64 = collision_map::CollisionMap<f64>;
pub type OGraph64 = experience_graph::OGraph<f64>;
pub type TEModel64 = te_model::TEModel<f64>;
pub type Costmap64 = costmap::Costmap2D<f64>;
pub type AdaptationController64 = adaptation::AdaptationController<f64>;

/// Single-precision aliases, used by the pipeline for speed.
pub type VoxelMap32 = voxel_map::VoxelMap<f32>;
pub type CollisionMap32 = collision_map::CollisionMap<f32>;
pub type OGraph32 = experience_graph::OGraph<f32>;
pub type TEModel32 = te_model::TEModel<f32>;
pub type Costmap32 = costmap::Costmap2D<f32>;
pub type AdaptationController32 = adaptation::AdaptationController<f32>;
