//! Ground, trunks and vegetation, with the ground-truth label function.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vegnav_core::collision_map::Label;
use vegnav_core::voxel_map::VoxelKey;

use crate::error::{Result, SimError};

pub const WORLD_FORMAT_VERSION: u32 = 1;

/// Mean and standard deviation of a material's return intensity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intensity {
    pub mean: f64,
    pub std: f64,
}

impl Intensity {
    pub const VEGETATION: Intensity = Intensity { mean: 180.0, std: 30.0 };
    pub const TRUNK: Intensity = Intensity { mean: 90.0, std: 20.0 };
    pub const GROUND: Intensity = Intensity { mean: 60.0, std: 15.0 };
}

/// Piecewise-planar height field: a square grid of heights, each cell split
/// into two triangles along its `(0,0)–(1,1)` diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ground {
    pub cell: f64,
    /// `heights[i][j]` is the height at `(i·cell, j·cell)`.
    pub heights: Vec<Vec<f64>>,
}

impl Ground {
    pub fn flat(extent: f64, cell: f64, z: f64) -> Self {
        let n = (extent / cell).ceil() as usize + 1;
        Self { cell, heights: vec![vec![z; n]; n] }
    }

    fn n(&self) -> usize {
        self.heights.len()
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        let n = self.n();
        let max = (n - 1) as f64 * self.cell;
        let (x, y) = (x.clamp(0.0, max), y.clamp(0.0, max));
        let i = ((x / self.cell) as usize).min(n - 2);
        let j = ((y / self.cell) as usize).min(n - 2);
        let fx = x / self.cell - i as f64;
        let fy = y / self.cell - j as f64;
        let h = &self.heights;
        let (h00, h10, h01, h11) = (h[i][j], h[i + 1][j], h[i][j + 1], h[i + 1][j + 1]);
        if fx >= fy {
            h00 + fx * (h10 - h00) + fy * (h11 - h10)
        } else {
            h00 + fy * (h01 - h00) + fx * (h11 - h01)
        }
    }

    /// Largest gradient norm over all triangles.
    pub fn max_slope(&self) -> f64 {
        let n = self.n();
        let h = &self.heights;
        let mut s: f64 = 0.0;
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let lower = ((h[i + 1][j] - h[i][j]) / self.cell, (h[i + 1][j + 1] - h[i + 1][j]) / self.cell);
                let upper = ((h[i + 1][j + 1] - h[i][j + 1]) / self.cell, (h[i][j + 1] - h[i][j]) / self.cell);
                s = s.max(lower.0.hypot(lower.1)).max(upper.0.hypot(upper.1));
            }
        }
        s
    }
}

/// Rigid vertical cylinder standing on the ground.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trunk {
    pub center: [f64; 2],
    pub radius: f64,
    pub base_z: f64,
    pub height: f64,
}

impl Trunk {
    pub fn top_z(&self) -> f64 {
        self.base_z + self.height
    }
}

/// Axis-aligned ellipsoid of permeable vegetation. Non-pliable clusters
/// have a rigid core: the same ellipsoid scaled by `core_frac`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VegCluster {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub pass_prob: f64,
    pub pliable: bool,
    pub core_frac: f64,
    pub intensity: Intensity,
}

impl VegCluster {
    pub fn core_radii(&self) -> [f64; 3] {
        self.radii.map(|r| r * self.core_frac)
    }

    /// Whether `p` lies in the rigid core.
    pub fn core_contains(&self, p: [f64; 3]) -> bool {
        !self.pliable && ellipsoid_value(self.center, self.core_radii(), p) < 1.0
    }
}

/// `Σ ((p_i − c_i) / r_i)²`.
pub(crate) fn ellipsoid_value(c: [f64; 3], r: [f64; 3], p: [f64; 3]) -> f64 {
    (0..3).map(|i| ((p[i] - c[i]) / r[i]).powi(2)).sum()
}

/// Generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub extent: f64,
    pub ground_cell: f64,
    pub ground_amplitude: f64,
    pub n_trunks: usize,
    pub trunk_radius: [f64; 2],
    pub trunk_height: [f64; 2],
    pub trunk_spacing: f64,
    pub n_veg: usize,
    pub veg_radius_xy: [f64; 2],
    pub veg_radius_z: [f64; 2],
    pub pass_prob: [f64; 2],
    pub pliable_fraction: f64,
    pub core_frac: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            extent: 30.0,
            ground_cell: 5.0,
            ground_amplitude: 0.25,
            n_trunks: 30,
            trunk_radius: [0.1, 0.25],
            trunk_height: [3.0, 8.0],
            trunk_spacing: 2.5,
            n_veg: 40,
            veg_radius_xy: [0.4, 1.0],
            veg_radius_z: [0.3, 0.7],
            pass_prob: [0.3, 0.8],
            pliable_fraction: 0.6,
            core_frac: 0.5,
        }
    }
}

impl WorldConfig {
    fn validate(&self) -> Result<()> {
        let ranges = [self.trunk_radius, self.trunk_height, self.veg_radius_xy, self.veg_radius_z, self.pass_prob];
        let ok = self.extent > 0.0
            && self.ground_cell > 0.0
            && self.ground_amplitude >= 0.0
            && self.trunk_spacing >= 0.0
            && ranges.iter().all(|r| r[0] > 0.0 && r[0] <= r[1])
            && self.pass_prob[1] <= 1.0
            && (0.0..=1.0).contains(&self.pliable_fraction)
            && self.core_frac > 0.0
            && self.core_frac < 1.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid world configuration {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub format_version: u32,
    pub seed: u64,
    pub extent: f64,
    pub ground: Ground,
    pub trunks: Vec<Trunk>,
    pub veg: Vec<VegCluster>,
    /// Parameters the world was drawn from, for regenerating siblings.
    pub config: WorldConfig,
}

/// Draws a world. Trunk centers come from dart throwing with a minimum
/// spacing; when the requested count does not fit, generation fails.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<World> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = config.extent;
    let n = (e / config.ground_cell).ceil() as usize + 1;
    let heights = (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..=1.0) * config.ground_amplitude).collect())
        .collect();
    let ground = Ground { cell: config.ground_cell, heights };

    let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] < r[1] { rng.random_range(r[0]..r[1]) } else { r[0] };
    let margin = config.trunk_radius[1];
    let mut trunks: Vec<Trunk> = Vec::with_capacity(config.n_trunks);
    let max_attempts = 1000 * config.n_trunks.max(1);
    let mut attempts = 0;
    while trunks.len() < config.n_trunks {
        attempts += 1;
        if attempts > max_attempts {
            return Err(SimError::Infeasible(format!(
                "placed {} of {} trunks with spacing {} in a {e} m world",
                trunks.len(),
                config.n_trunks,
                config.trunk_spacing
            )));
        }
        let c = [rng.random_range(margin..e - margin), rng.random_range(margin..e - margin)];
        let clear = trunks.iter().all(|t| (t.center[0] - c[0]).hypot(t.center[1] - c[1]) >= config.trunk_spacing);
        if !clear {
            continue;
        }
        let radius = uniform(&mut rng, config.trunk_radius);
        let height = uniform(&mut rng, config.trunk_height);
        trunks.push(Trunk { center: c, radius, base_z: ground.height(c[0], c[1]) - 0.2, height: height + 0.2 });
    }

    let mut veg = Vec::with_capacity(config.n_veg);
    for _ in 0..config.n_veg {
        let rxy = uniform(&mut rng, config.veg_radius_xy);
        let ry = rxy * rng.random_range(0.7..1.3);
        let rz = uniform(&mut rng, config.veg_radius_z);
        let (x, y) = (rng.random_range(0.0..e), rng.random_range(0.0..e));
        // Sits on the ground, slightly sunk.
        let z = ground.height(x, y) + rz * 0.8;
        veg.push(VegCluster {
            center: [x, y, z],
            radii: [rxy, ry, rz],
            pass_prob: uniform(&mut rng, config.pass_prob),
            pliable: rng.random_bool(config.pliable_fraction),
            core_frac: config.core_frac,
            intensity: Intensity::VEGETATION,
        });
    }
    Ok(World { format_version: WORLD_FORMAT_VERSION, seed, extent: e, ground, trunks, veg, config: config.clone() })
}

impl World {
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        (0.0..=self.extent).contains(&x) && (0.0..=self.extent).contains(&y)
    }

    /// Whether the axis-aligned box `[lo, hi]` overlaps a trunk or a rigid
    /// core with positive volume.
    pub fn box_hits_rigid(&self, lo: [f64; 3], hi: [f64; 3]) -> bool {
        self.trunks.iter().any(|t| {
            let cx = t.center[0].clamp(lo[0], hi[0]);
            let cy = t.center[1].clamp(lo[1], hi[1]);
            (cx - t.center[0]).hypot(cy - t.center[1]) < t.radius && lo[2] < t.top_z() && hi[2] > t.base_z
        }) || self.veg.iter().filter(|v| !v.pliable).any(|v| {
            let r = v.core_radii();
            let d2: f64 = (0..3)
                .map(|i| {
                    let q = v.center[i].clamp(lo[i], hi[i]);
                    ((q - v.center[i]) / r[i]).powi(2)
                })
                .sum();
            d2 < 1.0
        })
    }

    /// Ground-truth label of a voxel: non-traversable if it overlaps rigid
    /// geometry, traversable if its center is within 1 m above the ground
    /// (down to one voxel below it), otherwise unknown.
    pub fn ground_truth(&self, key: &VoxelKey, res: f64) -> Option<Label> {
        let lo = [key.i as f64 * res, key.j as f64 * res, key.k as f64 * res];
        let hi = [lo[0] + res, lo[1] + res, lo[2] + res];
        if self.box_hits_rigid(lo, hi) {
            return Some(Label::NonTraversable);
        }
        let c = key.center(res);
        let g = self.ground.height(c[0], c[1]);
        (c[2] >= g - res && c[2] <= g + 1.0).then_some(Label::Traversable)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<World> {
        let world: World = serde_json::from_reader(r)?;
        if world.format_version != WORLD_FORMAT_VERSION {
            return Err(SimError::Version(world.format_version));
        }
        if world.trunks.iter().any(|t| !(t.radius > 0.0)) || world.veg.iter().any(|v| !(v.pass_prob > 0.0 && v.pass_prob <= 1.0)) {
            return Err(SimError::Config("world violates trunk radius or pass probability bounds".into()));
        }
        Ok(world)
    }
}
