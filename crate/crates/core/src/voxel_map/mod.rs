//! Sparse probabilistic voxel map.
//!
//! Each voxel keeps sufficient statistics for an occupancy belief, a 3D
//! Gaussian of endpoint locations, hit/miss permeability counts, intensity
//! moments and a second-return count. Everything a classifier needs is
//! recovered from those sums without revisiting raw points.

mod io;
mod key;
mod raycast;

pub use io::{read_jsonl, write_jsonl, VoxelRecord, MAP_FORMAT_VERSION};
pub use key::{key_map, KeyBuildHasher, KeyMap, SpatialHasher, VoxelKey};
pub use raycast::{raycast_into, raycast_voxels};

use serde::{Deserialize, Serialize};

use crate::real::{all_finite, log_odds, logistic, Real, Vec3};

/// Width of [`FeatureVector`].
pub const FEATURE_DIM: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarReturn<T> {
    pub endpoint: Vec3<T>,
    pub intensity: T,
    pub is_second_return: bool,
}

impl<T: Real> LidarReturn<T> {
    pub fn new(endpoint: Vec3<T>, intensity: T) -> Self {
        Self { endpoint, intensity, is_second_return: false }
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.endpoint) && self.intensity.is_finite()
    }
}

/// Per-voxel sufficient statistics.
///
/// `sum_p` and `sum_ppt` accumulate endpoint offsets from the voxel center
/// (meters), which keeps the covariance well conditioned far from the
/// origin. `sum_ppt` stores the upper triangle as `xx, xy, xz, yy, yz, zz`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Voxel<T> {
    pub log_odds_occ: T,
    pub n_endpoints: u32,
    pub sum_p: Vec3<T>,
    pub sum_ppt: [T; 6],
    pub n_hit: u32,
    pub n_miss: u32,
    pub sum_i: T,
    pub sum_i2: T,
    pub n_second_returns: u32,
    pub last_update: T,
}

impl<T: Real> Voxel<T> {
    pub fn p_occ(&self) -> T {
        logistic(self.log_odds_occ)
    }

    /// Mean endpoint offset from the voxel center, zero when empty.
    pub fn mean_offset(&self) -> Vec3<T> {
        if self.n_endpoints == 0 {
            return [T::zero(); 3];
        }
        let n = T::from_count(self.n_endpoints.into());
        [self.sum_p[0] / n, self.sum_p[1] / n, self.sum_p[2] / n]
    }

    /// Population covariance of the endpoints, upper triangle.
    pub fn covariance(&self) -> [T; 6] {
        if self.n_endpoints == 0 {
            return [T::zero(); 6];
        }
        let n = T::from_count(self.n_endpoints.into());
        let m = self.mean_offset();
        let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        let mut cov = [T::zero(); 6];
        for (c, &(a, b)) in pairs.iter().enumerate() {
            cov[c] = self.sum_ppt[c] / n - m[a] * m[b];
        }
        // Diagonal entries cannot be negative; rounding can push them below zero.
        for c in [0, 3, 5] {
            cov[c] = cov[c].max(T::zero());
        }
        cov
    }

    pub fn intensity_mean(&self) -> T {
        if self.n_endpoints == 0 {
            return T::zero();
        }
        self.sum_i / T::from_count(self.n_endpoints.into())
    }

    pub fn intensity_std(&self) -> T {
        if self.n_endpoints == 0 {
            return T::zero();
        }
        let n = T::from_count(self.n_endpoints.into());
        let mean = self.sum_i / n;
        (self.sum_i2 / n - mean * mean).max(T::zero()).sqrt()
    }

    pub fn hit_ratio(&self) -> T {
        let total = u64::from(self.n_hit) + u64::from(self.n_miss);
        if total == 0 {
            return T::zero();
        }
        T::from_count(self.n_hit.into()) / T::from_count(total)
    }

    pub fn is_observed(&self) -> bool {
        self.n_endpoints > 0 || self.n_miss > 0
    }

    fn add_endpoint(&mut self, offset: &Vec3<T>, intensity: T, second: bool) {
        self.n_endpoints += 1;
        self.n_hit += 1;
        for a in 0..3 {
            self.sum_p[a] += offset[a];
        }
        let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        for (c, &(a, b)) in pairs.iter().enumerate() {
            self.sum_ppt[c] += offset[a] * offset[b];
        }
        self.sum_i += intensity;
        self.sum_i2 += intensity * intensity;
        if second {
            self.n_second_returns += 1;
        }
    }

    /// The fixed-width feature vector; `None` for a voxel nothing touched.
    pub fn features(&self, params: &FeatureParams<T>) -> Option<FeatureVector<T>> {
        if !self.is_observed() {
            return None;
        }
        let res = params.resolution;
        let res2 = res * res;
        let mu = self.mean_offset();
        let cov = self.covariance();
        let mut f = [T::zero(); FEATURE_DIM];
        f[0] = self.p_occ();
        f[1] = T::from_count(self.n_endpoints.into()).ln_1p();
        for a in 0..3 {
            f[2 + a] = mu[a] / res;
        }
        for c in 0..6 {
            f[5 + c] = cov[c] / res2;
        }
        f[11] = self.hit_ratio();
        f[12] = T::from_count(self.n_miss.into()).ln_1p();
        f[13] = self.intensity_mean() / params.intensity_max;
        f[14] = self.intensity_std() / params.intensity_max;
        f[15] = T::from_count(self.n_second_returns.into()).ln_1p();
        Some(FeatureVector(f))
    }
}

/// Sixteen per-voxel features in fixed order: `p_occ`, `log1p(n_endpoints)`,
/// mean offset x/y/z (voxel units), covariance xx xy xz yy yz zz (voxel
/// units²), hit ratio, `log1p(n_miss)`, intensity mean and std over the
/// intensity scale, `log1p(n_second_returns)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector<T>(pub [T; FEATURE_DIM]);

impl<T: Real> FeatureVector<T> {
    pub fn p_occ(&self) -> T {
        self.0[0]
    }

    pub fn hit_ratio(&self) -> T {
        self.0[11]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureParams<T> {
    pub resolution: T,
    pub intensity_max: T,
}

/// Anything that can produce a feature vector for a key: the live map,
/// snapshots, experience-graph submaps.
pub trait FeatureSource<T: Real> {
    fn features_at(&self, key: &VoxelKey) -> Option<FeatureVector<T>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConfig<T> {
    pub resolution: T,
    pub p_hit: T,
    pub p_miss: T,
    pub clamp: T,
    pub intensity_max: T,
}

impl<T: Real> Default for MapConfig<T> {
    fn default() -> Self {
        Self {
            resolution: T::lit(0.1),
            p_hit: T::lit(0.7),
            p_miss: T::lit(0.4),
            clamp: T::lit(10.0),
            intensity_max: T::lit(255.0),
        }
    }
}

impl<T: Real> MapConfig<T> {
    pub fn with_resolution(resolution: T) -> Self {
        Self { resolution, ..Self::default() }
    }

    pub fn feature_params(&self) -> FeatureParams<T> {
        FeatureParams { resolution: self.resolution, intensity_max: self.intensity_max }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScanReport {
    pub integrated: usize,
    pub skipped: usize,
    pub misses: usize,
}

#[derive(Clone, Debug)]
pub struct VoxelMap<T> {
    config: MapConfig<T>,
    voxels: KeyMap<Voxel<T>>,
}

impl<T: Real> VoxelMap<T> {
    pub fn new(config: MapConfig<T>) -> Self {
        Self { config, voxels: key_map() }
    }

    pub fn with_resolution(resolution: T) -> Self {
        Self::new(MapConfig::with_resolution(resolution))
    }

    pub fn config(&self) -> &MapConfig<T> {
        &self.config
    }

    pub fn resolution(&self) -> T {
        self.config.resolution
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&Voxel<T>> {
        self.voxels.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelKey, &Voxel<T>)> {
        self.voxels.iter()
    }

    pub fn keys_sorted(&self) -> Vec<VoxelKey> {
        let mut keys: Vec<_> = self.voxels.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn insert(&mut self, key: VoxelKey, voxel: Voxel<T>) {
        self.voxels.insert(key, voxel);
    }

    pub fn key_of(&self, p: &Vec3<T>) -> VoxelKey {
        VoxelKey::from_point(p, self.config.resolution)
    }

    pub fn center_of(&self, key: &VoxelKey) -> Vec3<T> {
        key.center(self.config.resolution)
    }

    /// Mean endpoint location in world coordinates.
    pub fn ndt_mean(&self, key: &VoxelKey) -> Option<Vec3<T>> {
        let v = self.voxels.get(key)?;
        if v.n_endpoints == 0 {
            return None;
        }
        let c = self.center_of(key);
        let m = v.mean_offset();
        Some([c[0] + m[0], c[1] + m[1], c[2] + m[2]])
    }

    /// Integrates one scan taken from `sensor_origin` at time `t`.
    ///
    /// Hits and misses are tallied per voxel for the whole scan and the
    /// occupancy log-odds receive one clamped update per voxel, so the result
    /// does not depend on the order of `returns`.
    pub fn integrate_scan(&mut self, sensor_origin: &Vec3<T>, returns: &[LidarReturn<T>], t: T) -> ScanReport {
        let mut report = ScanReport::default();
        if !all_finite(sensor_origin) {
            report.skipped = returns.len();
            return report;
        }
        let res = self.config.resolution;
        let mut tally: KeyMap<(u32, u32)> = key_map();
        let mut ray = Vec::new();
        for ret in returns {
            if !ret.is_finite() {
                report.skipped += 1;
                continue;
            }
            report.integrated += 1;
            let key = VoxelKey::from_point(&ret.endpoint, res);
            let c = key.center(res);
            let offset = [ret.endpoint[0] - c[0], ret.endpoint[1] - c[1], ret.endpoint[2] - c[2]];
            self.voxels
                .entry(key)
                .or_default()
                .add_endpoint(&offset, ret.intensity, ret.is_second_return);
            tally.entry(key).or_default().0 += 1;

            raycast_into(sensor_origin, &ret.endpoint, res, &mut ray);
            report.misses += ray.len();
            for k in &ray {
                tally.entry(*k).or_default().1 += 1;
            }
        }

        let l_hit = log_odds(self.config.p_hit);
        let l_miss = log_odds(self.config.p_miss);
        let clamp = self.config.clamp;
        for (key, (hits, misses)) in tally {
            let v = self.voxels.entry(key).or_default();
            v.n_miss += misses;
            let delta = T::from_count(hits.into()) * l_hit + T::from_count(misses.into()) * l_miss;
            v.log_odds_occ = (v.log_odds_occ + delta).max(-clamp).min(clamp);
            v.last_update = t;
        }
        report
    }

    pub fn feature_vector(&self, key: &VoxelKey) -> Option<FeatureVector<T>> {
        self.voxels.get(key)?.features(&self.config.feature_params())
    }

    /// Copy of every voxel whose center lies in the vertical cylinder of
    /// radius `r_max` around `center` with `z_min ≤ z − center_z ≤ z_max`
    /// (all bounds inclusive).
    pub fn local_snapshot(&self, center: &Vec3<T>, r_max: T, z_min: T, z_max: T) -> VoxelMap<T> {
        let mut out = VoxelMap::new(self.config);
        let res = self.config.resolution;
        let cyl = Cylinder { center: *center, r_max, z_min, z_max };
        let (lo, hi) = cyl.key_bounds(res);
        // Scan whichever is smaller: the cylinder's key box or the map.
        let box_cells = (hi.i - lo.i + 1) as usize * (hi.j - lo.j + 1) as usize * (hi.k - lo.k + 1) as usize;
        if box_cells < self.voxels.len() {
            for i in lo.i..=hi.i {
                for j in lo.j..=hi.j {
                    for k in lo.k..=hi.k {
                        let key = VoxelKey::new(i, j, k);
                        if let Some(v) = self.voxels.get(&key) {
                            if cyl.contains(&key.center(res)) {
                                out.voxels.insert(key, *v);
                            }
                        }
                    }
                }
            }
        } else {
            for (key, v) in &self.voxels {
                if cyl.contains(&key.center(res)) {
                    out.voxels.insert(*key, *v);
                }
            }
        }
        out
    }
}

impl<T: Real> FeatureSource<T> for VoxelMap<T> {
    fn features_at(&self, key: &VoxelKey) -> Option<FeatureVector<T>> {
        self.feature_vector(key)
    }
}

/// Vertical cylinder around a point; the region a local map or graph node covers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cylinder<T> {
    pub center: Vec3<T>,
    pub r_max: T,
    pub z_min: T,
    pub z_max: T,
}

impl<T: Real> Cylinder<T> {
    pub fn contains(&self, p: &Vec3<T>) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let dz = p[2] - self.center[2];
        dx * dx + dy * dy <= self.r_max * self.r_max && dz >= self.z_min && dz <= self.z_max
    }

    /// Inclusive key box covering every cell whose center may be inside.
    pub fn key_bounds(&self, res: T) -> (VoxelKey, VoxelKey) {
        let lo = [self.center[0] - self.r_max, self.center[1] - self.r_max, self.center[2] + self.z_min];
        let hi = [self.center[0] + self.r_max, self.center[1] + self.r_max, self.center[2] + self.z_max];
        (VoxelKey::from_point(&lo, res), VoxelKey::from_point(&hi, res))
    }
}
