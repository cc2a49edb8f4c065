use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vegnav_core::collision_map::{event_local_box, CollisionConfig, CollisionEvent, RobotDims, TraversalState};
use vegnav_core::voxel_map::{LidarReturn, MapConfig, VoxelKey, VoxelMap};
use vegnav_sim::lidar::simulate_rays;
use vegnav_sim::world::{Ground, Intensity, Trunk, VegCluster};
use vegnav_sim::{coverage_script, generate_world, run_episode, CoverageConfig, EpisodeConfig, LidarConfig, World, WorldConfig};

fn rigid_at(world: &World, p: [f64; 3]) -> bool {
    world
        .trunks
        .iter()
        .any(|t| (p[0] - t.center[0]).hypot(p[1] - t.center[1]) < t.radius && p[2] >= t.base_z && p[2] <= t.top_z())
        || world.veg.iter().any(|v| v.core_contains(p))
}

/// Whether any point of a 1 cm lattice over the event's box lies in rigid
/// geometry.
fn box_touches_rigid(world: &World, e: &CollisionEvent<f64>) -> bool {
    let b = event_local_box(e.state, &RobotDims::default(), &CollisionConfig::default());
    let (s, c) = e.pose.yaw().sin_cos();
    let p = e.pose.position;
    let steps = |lo: f64, hi: f64, h: f64| ((hi - lo) / h).round() as usize;
    let (nx, ny, nz) = (steps(b.min[0], b.max[0], 0.01), steps(b.min[1], b.max[1], 0.01), steps(b.min[2], b.max[2], 0.02));
    for i in 0..=nx {
        for j in 0..=ny {
            let lx = b.min[0] + (b.max[0] - b.min[0]) * i as f64 / nx as f64;
            let ly = b.min[1] + (b.max[1] - b.min[1]) * j as f64 / ny as f64;
            let (x, y) = (p[0] + c * lx - s * ly, p[1] + s * lx + c * ly);
            for k in 0..=nz {
                let z = p[2] + b.min[2] + (b.max[2] - b.min[2]) * k as f64 / nz as f64;
                if rigid_at(world, [x, y, z]) {
                    return true;
                }
            }
        }
    }
    false
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn events_agree_with_rigid_geometry(seed in 0u64..1000) {
        let world = generate_world(&WorldConfig::default(), seed).unwrap();
        let script = coverage_script(&world, &CoverageConfig { duration: 60.0, seed, ..CoverageConfig::default() }).unwrap();
        let log = run_episode(&world, &script, &EpisodeConfig::default(), seed).unwrap();
        let mut n_ntr = 0;
        for e in log.events() {
            let touches = box_touches_rigid(&world, e);
            match e.state {
                TraversalState::NonTraversable => {
                    n_ntr += 1;
                    prop_assert!(touches, "collision at {:?} touches nothing", e.pose.position);
                }
                TraversalState::Traversable => prop_assert!(!touches, "traversal at {:?} overlaps rigid geometry", e.pose.position),
            }
        }
        prop_assert!(n_ntr > 0);
    }

    #[test]
    fn trunk_interiors_are_never_traversable(seed in 0u64..1000, u in 0.0f64..1.0, a in 0.0f64..std::f64::consts::TAU, h in 0.0f64..1.0) {
        let world = generate_world(&WorldConfig::default(), seed).unwrap();
        for t in &world.trunks {
            let r = t.radius * u.sqrt() * 0.999;
            let p = [t.center[0] + r * a.cos(), t.center[1] + r * a.sin(), t.base_z + h * t.height];
            let key = VoxelKey::from_point(&p, 0.1);
            prop_assert_ne!(world.ground_truth(&key, 0.1), Some(vegnav_core::collision_map::Label::Traversable));
        }
    }

    /// A vegetation wall one voxel thick in front of a trunk: every ray
    /// through the voxel either ends on the wall inside it or passes on to
    /// the trunk.
    #[test]
    fn voxel_hit_ratio_tracks_pass_prob(pass_prob in 0.3f64..0.95, seed in 0u64..1000) {
        let world = World {
            format_version: 1,
            seed: 0,
            extent: 30.0,
            ground: Ground::flat(30.0, 5.0, 0.0),
            trunks: vec![Trunk { center: [12.0, 0.05], radius: 1.0, base_z: 0.0, height: 5.0 }],
            veg: vec![VegCluster {
                center: [10.05, 0.05, 1.05],
                radii: [0.04, 2.0, 2.0],
                pass_prob,
                pliable: true,
                core_frac: 0.5,
                intensity: Intensity::VEGETATION,
            }],
            config: WorldConfig::default(),
        };
        let cfg = LidarConfig { range_noise: 0.0, second_return_prob: 0.0, ..LidarConfig::default() };
        let origin = [5.0, 0.05, 1.05];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = VoxelMap::new(MapConfig::with_resolution(0.1));
        for scan in 0..4 {
            let dirs: Vec<[f64; 3]> = (0..500)
                .map(|i| {
                    let (y, z) = (0.006 + 0.088 * ((i * 37) % 500) as f64 / 500.0, 1.006 + 0.088 * i as f64 / 500.0);
                    let d = [10.05 - origin[0], y - origin[1], z - origin[2]];
                    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    d.map(|v| v / n)
                })
                .collect();
            let returns: Vec<LidarReturn<f64>> = simulate_rays(&world, &cfg, origin, &dirs, &mut rng);
            prop_assert_eq!(returns.len(), dirs.len());
            map.integrate_scan(&origin, &returns, scan as f64);
        }
        let v = map.get(&VoxelKey::from_point(&[10.05, 0.05, 1.05], 0.1)).unwrap();
        prop_assert!(v.n_hit + v.n_miss >= 500);
        prop_assert!((v.hit_ratio() - (1.0 - pass_prob)).abs() <= 0.05, "hit ratio {} for pass_prob {}", v.hit_ratio(), pass_prob);
    }
}
