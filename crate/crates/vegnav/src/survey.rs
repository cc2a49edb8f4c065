//! Ground-truth evaluation on a region the robot never drives through.

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vegnav_core::collision_map::{Label, RobotDims};
use vegnav_core::experience_graph::GraphParams;
use vegnav_core::voxel_map::{MapConfig, VoxelKey, VoxelMap};
use vegnav_sim::robot::footprint_blocked;
use vegnav_sim::{simulate_scan, LidarConfig, World};

use crate::pipeline::returns32;

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Region {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) {
            bail!("region needs x0 < x1 and y0 < y1, got {x0},{y0},{x1},{y1}");
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn from_array(r: [f64; 4]) -> Result<Self> {
        Self::new(r[0], r[1], r[2], r[3])
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

impl FromStr for Region {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>()?;
        match v[..] {
            [x0, y0, x1, y1] => Region::new(x0, y0, x1, y1),
            _ => bail!("expected x0,y0,x1,y1, got {s:?}"),
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.x1, self.y1)
    }
}

#[derive(Clone, Debug)]
pub struct SurveyConfig {
    pub lidar: LidarConfig,
    /// Distance between survey stations, m.
    pub spacing: f64,
    pub map: MapConfig<f32>,
    /// Largest number of voxels scored; larger sets are subsampled.
    pub max_voxels: usize,
    pub seed: u64,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self { lidar: LidarConfig::default(), spacing: 2.5, map: MapConfig::default(), max_voxels: 20_000, seed: 0 }
    }
}

/// Maps `region` with the robot's lidar from a grid of stations inside it.
/// Stations where the robot would not fit are skipped.
pub fn survey_map(world: &World, region: &Region, cfg: &SurveyConfig) -> VoxelMap<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut map = VoxelMap::new(cfg.map);
    let dims = RobotDims::default();
    let steps = |a: f64, b: f64| ((b - a) / cfg.spacing).floor().max(0.0) as usize;
    let (nx, ny) = (steps(region.x0, region.x1), steps(region.y0, region.y1));
    let off = |a: f64, b: f64, n: usize| a + ((b - a) - n as f64 * cfg.spacing) / 2.0;
    let (ox, oy) = (off(region.x0, region.x1, nx), off(region.y0, region.y1, ny));
    let mut t = 0.0f32;
    for i in 0..=nx {
        for j in 0..=ny {
            let (x, y) = (ox + i as f64 * cfg.spacing, oy + j as f64 * cfg.spacing);
            if !world.contains_xy(x, y) || footprint_blocked(world, &dims, x, y, 0.0) {
                continue;
            }
            let origin = [x, y, world.ground.height(x, y) + cfg.lidar.mount_height];
            let returns = simulate_scan(world, &cfg.lidar, origin, 0.0, &mut rng);
            map.integrate_scan(&origin.map(|v| v as f32), &returns32(&returns), t);
            t += 0.5;
        }
    }
    map
}

/// Ground-truth labels of the voxels in `region` that hold lidar
/// endpoints and lie in the height band the experience graph learns from.
pub fn eval_labels(world: &World, map: &VoxelMap<f32>, region: &Region, cfg: &SurveyConfig) -> Vec<(VoxelKey, Label)> {
    let res = map.resolution() as f64;
    let band = GraphParams::<f64>::default();
    let (lo, hi) = (band.z_min - band.z_padding, band.z_max + band.z_padding);
    let mut labels: Vec<(VoxelKey, Label)> = map
        .keys_sorted()
        .into_iter()
        .filter(|k| map.get(k).is_some_and(|v| v.n_endpoints > 0))
        .filter_map(|k| {
            let c = k.center(res);
            if !region.contains(c[0], c[1]) {
                return None;
            }
            let dz = c[2] - world.ground.height(c[0], c[1]);
            if dz < lo || dz > hi {
                return None;
            }
            world.ground_truth(&k, res).map(|l| (k, l))
        })
        .collect();
    if labels.len() > cfg.max_voxels {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        labels.shuffle(&mut rng);
        labels.truncate(cfg.max_voxels);
        labels.sort_unstable_by_key(|(k, _)| *k);
    }
    labels
}
