//! Two-return spinning lidar cast against the analytic world.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use vegnav_core::voxel_map::LidarReturn;

use crate::world::{ellipsoid_value, Intensity, World};

#[derive(Clone, Debug, PartialEq)]
pub struct LidarConfig {
    /// Elevation of each ring, radians.
    pub elevations: Vec<f64>,
    pub azimuth_steps: usize,
    pub max_range: f64,
    pub range_noise: f64,
    /// Chance that a vegetation first return is followed by a second one.
    pub second_return_prob: f64,
    /// Sensor height above the robot base.
    pub mount_height: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            elevations: (0..16).map(|i| (-25.0 + 2.0 * i as f64).to_radians()).collect(),
            azimuth_steps: 360,
            max_range: 20.0,
            range_noise: 0.01,
            second_return_prob: 0.3,
            mount_height: 0.5,
        }
    }
}

impl LidarConfig {
    /// Unit ray directions in the world frame for a sensor with heading `yaw`.
    pub fn directions(&self, yaw: f64) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.elevations.len() * self.azimuth_steps);
        for a in 0..self.azimuth_steps {
            let az = yaw + a as f64 * std::f64::consts::TAU / self.azimuth_steps as f64;
            for el in &self.elevations {
                out.push([el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Surface {
    Ground,
    Trunk,
    Vegetation(usize),
    Core(usize),
}

/// Distance to the first trunk surface, if the ray meets a trunk's side.
fn trunk_hit(world: &World, o: [f64; 3], d: [f64; 3], t_max: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let a = d[0] * d[0] + d[1] * d[1];
    if a < 1e-15 {
        return None;
    }
    for tr in &world.trunks {
        let (ox, oy) = (o[0] - tr.center[0], o[1] - tr.center[1]);
        let b = ox * d[0] + oy * d[1];
        let c = ox * ox + oy * oy - tr.radius * tr.radius;
        let disc = b * b - a * c;
        if disc < 0.0 {
            continue;
        }
        let t = (-b - disc.sqrt()) / a;
        if t <= 0.0 || t >= best.unwrap_or(t_max) {
            continue;
        }
        let z = o[2] + t * d[2];
        if z >= tr.base_z && z <= tr.top_z() {
            best = Some(t);
        }
    }
    best
}

/// Entry and exit distances of a ray through an axis-aligned ellipsoid.
fn ellipsoid_span(c: [f64; 3], r: [f64; 3], o: [f64; 3], d: [f64; 3]) -> Option<(f64, f64)> {
    let oo = [(o[0] - c[0]) / r[0], (o[1] - c[1]) / r[1], (o[2] - c[2]) / r[2]];
    let dd = [d[0] / r[0], d[1] / r[1], d[2] / r[2]];
    let a: f64 = dd.iter().map(|v| v * v).sum();
    let b: f64 = oo.iter().zip(&dd).map(|(p, q)| p * q).sum();
    let cc: f64 = oo.iter().map(|v| v * v).sum::<f64>() - 1.0;
    let disc = b * b - a * cc;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((-b - s) / a, (-b + s) / a))
}

/// Distance to the ground by sphere tracing against the slope bound.
pub fn ground_hit(world: &World, slope: f64, o: [f64; 3], d: [f64; 3], t_max: f64) -> Option<f64> {
    let dxy = d[0].hypot(d[1]);
    let rate = slope * dxy - d[2];
    if rate <= 0.0 {
        return None;
    }
    let mut t = 0.0;
    for _ in 0..400 {
        let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
        let h = p[2] - world.ground.height(p[0], p[1]);
        if h < 1e-7 {
            return Some(t);
        }
        t += h / rate;
        if t > t_max {
            return None;
        }
    }
    Some(t)
}

/// Candidate interactions along one ray, nearest first.
fn interactions(world: &World, slope: f64, o: [f64; 3], d: [f64; 3], t_max: f64) -> Vec<(f64, Surface)> {
    let mut out = Vec::new();
    let mut terminal = t_max;
    if let Some(t) = ground_hit(world, slope, o, d, t_max) {
        terminal = t;
        out.push((t, Surface::Ground));
    }
    if let Some(t) = trunk_hit(world, o, d, terminal) {
        terminal = t;
        out.push((t, Surface::Trunk));
    }
    for (i, v) in world.veg.iter().enumerate() {
        if let Some((t0, _)) = ellipsoid_span(v.center, v.radii, o, d) {
            // A sensor inside a bush sees through it.
            if t0 > 0.0 && t0 < terminal {
                out.push((t0, Surface::Vegetation(i)));
            }
        }
        if !v.pliable {
            if let Some((t0, _)) = ellipsoid_span(v.center, v.core_radii(), o, d) {
                if t0 > 0.0 && t0 < terminal {
                    out.push((t0, Surface::Core(i)));
                }
            }
        }
    }
    out.retain(|(t, _)| *t <= terminal);
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn intensity_sample<R: Rng>(rng: &mut R, m: Intensity) -> f64 {
    let n = Normal::new(m.mean, m.std).expect("finite intensity model");
    n.sample(rng).clamp(0.0, 255.0)
}

/// Casts one scan from `origin` with heading `yaw`.
///
/// Trunks and the ground always return. Each vegetation shell crossed
/// returns with probability `1 − pass_prob`; a rigid core returns with
/// probability `1 − pass_prob / 2`. After a vegetation first return, the
/// next surface the pulse would have returned from may be reported as a
/// second return.
pub fn simulate_scan<R: Rng>(world: &World, cfg: &LidarConfig, origin: [f64; 3], yaw: f64, rng: &mut R) -> Vec<LidarReturn<f64>> {
    simulate_rays(world, cfg, origin, &cfg.directions(yaw), rng)
}

pub fn simulate_rays<R: Rng>(
    world: &World,
    cfg: &LidarConfig,
    origin: [f64; 3],
    directions: &[[f64; 3]],
    rng: &mut R,
) -> Vec<LidarReturn<f64>> {
    let slope = world.ground.max_slope();
    let noise = Normal::new(0.0, cfg.range_noise.max(0.0)).expect("finite range noise");
    let mut out = Vec::new();
    for d in directions {
        let mut first_was_veg = false;
        for (t, surface) in interactions(world, slope, origin, *d, cfg.max_range) {
            let (returns, model) = match surface {
                Surface::Ground => (true, Intensity::GROUND),
                Surface::Trunk => (true, Intensity::TRUNK),
                Surface::Vegetation(i) => {
                    let v = &world.veg[i];
                    (rng.random_bool(1.0 - v.pass_prob), v.intensity)
                }
                Surface::Core(i) => {
                    let v = &world.veg[i];
                    (rng.random_bool(1.0 - v.pass_prob / 2.0), v.intensity)
                }
            };
            if !returns {
                continue;
            }
            if first_was_veg && !rng.random_bool(cfg.second_return_prob) {
                break;
            }
            let r = t + noise.sample(rng);
            let p = [origin[0] + r * d[0], origin[1] + r * d[1], origin[2] + r * d[2]];
            out.push(LidarReturn { endpoint: p, intensity: intensity_sample(rng, model), is_second_return: first_was_veg });
            if first_was_veg || !matches!(surface, Surface::Vegetation(_) | Surface::Core(_)) {
                break;
            }
            first_was_veg = true;
        }
    }
    out
}

/// Whether `p` lies inside any vegetation cluster.
pub fn in_vegetation(world: &World, p: [f64; 3]) -> bool {
    world.veg.iter().any(|v| ellipsoid_value(v.center, v.radii, p) < 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Ground, Trunk, VegCluster, WorldConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_world() -> World {
        World {
            format_version: 1,
            seed: 0,
            extent: 30.0,
            ground: Ground::flat(30.0, 5.0, 0.0),
            trunks: vec![],
            veg: vec![],
            config: WorldConfig::default(),
        }
    }

    fn bush(pass_prob: f64) -> VegCluster {
        VegCluster {
            center: [10.0, 10.0, 0.5],
            radii: [0.5, 0.5, 0.5],
            pass_prob,
            pliable: true,
            core_frac: 0.5,
            intensity: Intensity::VEGETATION,
        }
    }

    #[test]
    fn flat_ground_single_return() {
        let w = flat_world();
        let cfg = LidarConfig { range_noise: 0.0, ..LidarConfig::default() };
        let d = [0.0f64, (-30.0f64).to_radians().cos(), (-30.0f64).to_radians().sin()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = simulate_rays(&w, &cfg, [5.0, 5.0, 0.5], &[d], &mut rng);
        assert_eq!(r.len(), 1);
        let p = r[0].endpoint;
        assert!(p[2].abs() < 1e-6);
        assert!((p[1] - (5.0 + 0.5 / 30f64.to_radians().tan())).abs() < 1e-6);
        assert!(!r[0].is_second_return);
    }

    #[test]
    fn sloped_ground_hit_lies_on_surface() {
        let w = crate::world::generate_world(&WorldConfig { n_trunks: 0, n_veg: 0, ground_amplitude: 0.5, ..WorldConfig::default() }, 4).unwrap();
        let slope = w.ground.max_slope();
        for el in [-2.0f64, -10.0, -40.0] {
            for az in 0..8 {
                let a = az as f64 * 0.8;
                let d = [el.to_radians().cos() * a.cos(), el.to_radians().cos() * a.sin(), el.to_radians().sin()];
                let o = [15.0, 15.0, w.ground.height(15.0, 15.0) + 0.5];
                if let Some(t) = ground_hit(&w, slope, o, d, 40.0) {
                    let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
                    assert!((p[2] - w.ground.height(p[0], p[1])).abs() < 1e-5);
                    // Nothing below ground before the hit.
                    for s in 1..50 {
                        let q = t * s as f64 / 50.0;
                        let p = [o[0] + q * d[0], o[1] + q * d[1], o[2] + q * d[2]];
                        assert!(p[2] >= w.ground.height(p[0], p[1]) - 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn transparent_bush_then_trunk() {
        let mut w = flat_world();
        w.veg.push(bush(1.0));
        w.trunks.push(Trunk { center: [12.0, 10.0], radius: 0.2, base_z: -0.2, height: 5.0 });
        let cfg = LidarConfig { range_noise: 0.0, ..LidarConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = simulate_rays(&w, &cfg, [8.0, 10.0, 0.5], &[[1.0, 0.0, 0.0]], &mut rng);
        assert_eq!(r.len(), 1);
        assert!((r[0].endpoint[0] - 11.8).abs() < 1e-9);
    }

    #[test]
    fn vegetation_return_fraction_tracks_pass_prob() {
        let mut w = flat_world();
        w.veg.push(bush(0.5));
        let cfg = LidarConfig { second_return_prob: 0.0, ..LidarConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dirs = vec![[1.0, 0.0, 0.0]; 10_000];
        let r = simulate_rays(&w, &cfg, [8.0, 10.0, 0.5], &dirs, &mut rng);
        // Horizontal rays past the bush find nothing else.
        let frac = r.len() as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn second_returns_follow_vegetation() {
        let mut w = flat_world();
        w.veg.push(bush(0.3));
        let cfg = LidarConfig { second_return_prob: 1.0, ..LidarConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = [0.96, 0.0, -0.28];
        let r = simulate_rays(&w, &cfg, [8.6, 10.0, 1.0], &vec![d; 200], &mut rng);
        let seconds = r.iter().filter(|p| p.is_second_return).count();
        assert!(seconds > 0);
        for p in r.iter().filter(|p| p.is_second_return) {
            assert!(p.endpoint[2].abs() < 0.1, "second return should be on the ground");
        }
    }

    #[test]
    fn scan_has_expected_ray_count_on_flat_ground() {
        let w = flat_world();
        let cfg = LidarConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = simulate_scan(&w, &cfg, [15.0, 15.0, 0.5], 0.0, &mut rng);
        // Rings at or below −3° reach the ground within 20 m.
        let down = cfg.elevations.iter().filter(|e| 0.5 / (-e.tan()) <= 20.0 && **e < 0.0).count();
        assert_eq!(r.len(), down * 360);
    }
}
