//! Collision mapping: the robot treated as a sensor.
//!
//! Each stamped robot state contributes a fixed inverse-model log-odds
//! increment to every voxel of its bounding box: the chassis footprint for
//! traversal states, a frontal slab for collisions. Voxels whose posterior
//! leaves the dead zone become self-supervised labels.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{log_odds, logistic, Real, Vec3};
use crate::voxel_map::{key_map, FeatureSource, FeatureVector, KeyMap, VoxelKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraversalState {
    #[serde(rename = "TR")]
    Traversable,
    #[serde(rename = "NTR")]
    NonTraversable,
}

pub type Label = TraversalState;

/// Position plus unit quaternion `[w, x, y, z]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub position: Vec3<T>,
    pub quat: [T; 4],
}

impl<T: Real> Pose<T> {
    pub fn from_yaw(position: Vec3<T>, yaw: T) -> Self {
        let h = yaw * T::lit(0.5);
        Self { position, quat: [h.cos(), T::zero(), T::zero(), h.sin()] }
    }

    pub fn yaw(&self) -> T {
        let [w, x, y, z] = self.quat;
        let two = T::lit(2.0);
        (two * (w * z + x * y)).atan2(T::one() - two * (y * y + z * z))
    }

    pub fn is_valid(&self) -> bool {
        let norm2: T = self.quat.iter().map(|q| *q * *q).sum();
        self.position.iter().chain(self.quat.iter()).all(|v| v.is_finite())
            && (norm2 - T::one()).abs() < T::lit(1e-3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent<T> {
    pub t: T,
    pub pose: Pose<T>,
    pub state: TraversalState,
}

/// Chassis box in the robot frame: x forward, centered on the base in x/y,
/// from the base upward in z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotDims<T> {
    pub length: T,
    pub width: T,
    pub height: T,
}

impl<T: Real> Default for RobotDims<T> {
    fn default() -> Self {
        Self { length: T::lit(0.6), width: T::lit(0.4), height: T::lit(0.4) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionConfig<T> {
    pub p_ntr_on_collision: T,
    pub p_ntr_on_traversal: T,
    /// Distance the collision slab starts behind the front plate.
    pub behind_front: T,
    /// Distance the collision slab extends past the front plate.
    pub beyond_front: T,
    pub clamp: T,
}

impl<T: Real> Default for CollisionConfig<T> {
    fn default() -> Self {
        Self {
            p_ntr_on_collision: T::lit(0.75),
            p_ntr_on_traversal: T::lit(0.3),
            behind_front: T::lit(0.1),
            beyond_front: T::lit(0.2),
            clamp: T::lit(10.0),
        }
    }
}

/// Robot-frame box `[x0, x1] × [y0, y1] × [z0, z1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalBox<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

/// The box an event labels, in the robot frame.
pub fn event_local_box<T: Real>(state: TraversalState, dims: &RobotDims<T>, cfg: &CollisionConfig<T>) -> LocalBox<T> {
    let half_l = dims.length * T::lit(0.5);
    let half_w = dims.width * T::lit(0.5);
    let (x0, x1) = match state {
        TraversalState::Traversable => (-half_l, half_l),
        TraversalState::NonTraversable => (half_l - cfg.behind_front, half_l + cfg.beyond_front),
    };
    LocalBox { min: [x0, -half_w, T::zero()], max: [x1, half_w, dims.height] }
}

/// Voxels whose cell overlaps the event's yaw-oriented box with positive volume.
///
/// The vertical extent is tested as an interval overlap; the horizontal
/// rectangle-vs-square test is a separating-axis check.
pub fn event_bbox_voxels<T: Real>(
    event: &CollisionEvent<T>,
    dims: &RobotDims<T>,
    cfg: &CollisionConfig<T>,
    resolution: T,
) -> Vec<VoxelKey> {
    let b = event_local_box(event.state, dims, cfg);
    let yaw = event.pose.yaw();
    let (s, c) = yaw.sin_cos();
    let p = event.pose.position;
    let eps = T::lit(1e-9);

    // World-frame rectangle corners.
    let local = [[b.min[0], b.min[1]], [b.max[0], b.min[1]], [b.max[0], b.max[1]], [b.min[0], b.max[1]]];
    let corners: Vec<[T; 2]> =
        local.iter().map(|q| [p[0] + c * q[0] - s * q[1], p[1] + s * q[0] + c * q[1]]).collect();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (T::infinity(), T::neg_infinity(), T::infinity(), T::neg_infinity());
    for q in &corners {
        xmin = xmin.min(q[0]);
        xmax = xmax.max(q[0]);
        ymin = ymin.min(q[1]);
        ymax = ymax.max(q[1]);
    }
    let z0 = p[2] + b.min[2];
    let z1 = p[2] + b.max[2];
    let idx = |v: T| (v / resolution).floor().to_i32().unwrap_or(0);

    let mut out = Vec::new();
    for i in idx(xmin)..=idx(xmax) {
        for j in idx(ymin)..=idx(ymax) {
            let cx0 = T::lit(i as f64) * resolution;
            let cy0 = T::lit(j as f64) * resolution;
            if !rect_overlaps_cell(&corners, c, s, cx0, cy0, resolution, eps) {
                continue;
            }
            for k in idx(z0)..=idx(z1) {
                let cz0 = T::lit(k as f64) * resolution;
                if cz0 + resolution > z0 + eps && cz0 < z1 - eps {
                    out.push(VoxelKey::new(i, j, k));
                }
            }
        }
    }
    out
}

/// Separating-axis overlap of an oriented rectangle with the square cell
/// `[cx0, cx0+res] × [cy0, cy0+res]`. Touching edges do not count.
fn rect_overlaps_cell<T: Real>(corners: &[[T; 2]], c: T, s: T, cx0: T, cy0: T, res: T, eps: T) -> bool {
    let cell = [[cx0, cy0], [cx0 + res, cy0], [cx0 + res, cy0 + res], [cx0, cy0 + res]];
    let axes = [[T::one(), T::zero()], [T::zero(), T::one()], [c, s], [-s, c]];
    for axis in &axes {
        let proj = |q: &[T; 2]| q[0] * axis[0] + q[1] * axis[1];
        let (mut a0, mut a1) = (T::infinity(), T::neg_infinity());
        for q in corners {
            let v = proj(q);
            a0 = a0.min(v);
            a1 = a1.max(v);
        }
        let (mut b0, mut b1) = (T::infinity(), T::neg_infinity());
        for q in &cell {
            let v = proj(q);
            b0 = b0.min(v);
            b1 = b1.max(v);
        }
        if a1 <= b0 + eps || b1 <= a0 + eps {
            return false;
        }
    }
    true
}

/// Per-voxel log-odds that the voxel is non-traversable. Absent keys sit
/// at the 0.5 prior.
#[derive(Clone, Debug)]
pub struct CollisionMap<T> {
    config: CollisionConfig<T>,
    dims: RobotDims<T>,
    resolution: T,
    log_odds: KeyMap<T>,
}

impl<T: Real> CollisionMap<T> {
    pub fn new(config: CollisionConfig<T>, dims: RobotDims<T>, resolution: T) -> Self {
        Self { config, dims, resolution, log_odds: key_map() }
    }

    pub fn config(&self) -> &CollisionConfig<T> {
        &self.config
    }

    pub fn dims(&self) -> &RobotDims<T> {
        &self.dims
    }

    pub fn resolution(&self) -> T {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.log_odds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_odds.is_empty()
    }

    pub fn log_odds(&self, key: &VoxelKey) -> T {
        self.log_odds.get(key).copied().unwrap_or_else(T::zero)
    }

    pub fn p_ntr(&self, key: &VoxelKey) -> T {
        logistic(self.log_odds(key))
    }

    pub fn keys_sorted(&self) -> Vec<VoxelKey> {
        let mut keys: Vec<_> = self.log_odds.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn increment(&self, state: TraversalState) -> T {
        match state {
            TraversalState::NonTraversable => log_odds(self.config.p_ntr_on_collision),
            TraversalState::Traversable => log_odds(self.config.p_ntr_on_traversal),
        }
    }

    /// Adds the event's inverse-model term to every voxel of its box.
    pub fn apply_event(&mut self, event: &CollisionEvent<T>) -> usize {
        let delta = self.increment(event.state);
        let clamp = self.config.clamp;
        let keys = event_bbox_voxels(event, &self.dims, &self.config, self.resolution);
        for key in &keys {
            let l = self.log_odds.entry(*key).or_insert_with(T::zero);
            *l = (*l + delta).max(-clamp).min(clamp);
        }
        keys.len()
    }

    pub fn apply_events<'a>(&mut self, events: impl IntoIterator<Item = &'a CollisionEvent<T>>) {
        for e in events {
            self.apply_event(e);
        }
    }

    /// Labels every voxel outside the `(tr, ntr)` dead zone that also has
    /// features in `features`, in key order.
    pub fn extract_labels<F: FeatureSource<T>>(&self, features: &F, tr_threshold: T, ntr_threshold: T) -> Vec<LabeledVoxel<T>> {
        self.keys_sorted()
            .into_iter()
            .filter_map(|key| {
                let label = classify(self.p_ntr(&key), tr_threshold, ntr_threshold)?;
                let features = features.features_at(&key)?;
                Some(LabeledVoxel { key, label, features })
            })
            .collect()
    }
}

/// Binarizes a non-traversability probability with a dead zone.
pub fn classify<T: Real>(p_ntr: T, tr_threshold: T, ntr_threshold: T) -> Option<Label> {
    if p_ntr >= ntr_threshold {
        Some(Label::NonTraversable)
    } else if p_ntr <= tr_threshold {
        Some(Label::Traversable)
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledVoxel<T> {
    pub key: VoxelKey,
    pub label: Label,
    pub features: FeatureVector<T>,
}

#[derive(Serialize, Deserialize)]
struct EventRecord<T> {
    t: T,
    pos: Vec3<T>,
    quat: [T; 4],
    state: TraversalState,
}

pub fn write_events_jsonl<T: Real, W: Write>(events: &[CollisionEvent<T>], mut w: W) -> Result<()> {
    for e in events {
        let rec = EventRecord { t: e.t, pos: e.pose.position, quat: e.pose.quat, state: e.state };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events_jsonl<T: Real, R: BufRead>(r: R) -> Result<Vec<CollisionEvent<T>>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EventRecord<T> = serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "collision event",
            line: n + 1,
            reason: e.to_string(),
        })?;
        let event = CollisionEvent { t: rec.t, pose: Pose { position: rec.pos, quat: rec.quat }, state: rec.state };
        if !event.pose.is_valid() {
            return Err(Error::Format { what: "collision event", line: n + 1, reason: "invalid pose".into() });
        }
        out.push(event);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel_map::{Voxel, VoxelMap};
    use proptest::prelude::*;

    fn event(state: TraversalState, pos: [f64; 3], yaw: f64) -> CollisionEvent<f64> {
        CollisionEvent { t: 0.0, pose: Pose::from_yaw(pos, yaw), state }
    }

    fn cmap() -> CollisionMap<f64> {
        CollisionMap::new(CollisionConfig::default(), RobotDims::default(), 0.1)
    }

    /// Oracle: the event box tested against voxel centers by brute force.
    fn centers_in_box(e: &CollisionEvent<f64>, dims: &RobotDims<f64>, res: f64) -> Vec<VoxelKey> {
        let b = event_local_box(e.state, dims, &CollisionConfig::default());
        let yaw = e.pose.yaw();
        let mut out = Vec::new();
        for i in -30..30 {
            for j in -30..30 {
                for k in -5..15 {
                    let key = VoxelKey::new(i, j, k);
                    let c = key.center(res);
                    let dx = c[0] - e.pose.position[0];
                    let dy = c[1] - e.pose.position[1];
                    let lx = yaw.cos() * dx + yaw.sin() * dy;
                    let ly = -yaw.sin() * dx + yaw.cos() * dy;
                    let lz = c[2] - e.pose.position[2];
                    if lx > b.min[0] && lx < b.max[0] && ly > b.min[1] && ly < b.max[1] && lz > b.min[2] && lz < b.max[2] {
                        out.push(key);
                    }
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn traversal_footprint_block() {
        let e = event(TraversalState::Traversable, [0.0, 0.0, 0.0], 0.0);
        let keys = event_bbox_voxels(&e, &RobotDims::default(), &CollisionConfig::default(), 0.1);
        assert_eq!(keys.len(), 6 * 4 * 4);
        let (is, js, ks): (Vec<_>, Vec<_>, Vec<_>) = (
            keys.iter().map(|k| k.i).collect(),
            keys.iter().map(|k| k.j).collect(),
            keys.iter().map(|k| k.k).collect(),
        );
        assert_eq!((*is.iter().min().unwrap(), *is.iter().max().unwrap()), (-3, 2));
        assert_eq!((*js.iter().min().unwrap(), *js.iter().max().unwrap()), (-2, 1));
        assert_eq!((*ks.iter().min().unwrap(), *ks.iter().max().unwrap()), (0, 3));
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(sorted, centers_in_box(&e, &RobotDims::default(), 0.1));
    }

    #[test]
    fn yaw_ninety_swaps_block_axes() {
        let e = event(TraversalState::Traversable, [0.0, 0.0, 0.0], std::f64::consts::FRAC_PI_2);
        let mut keys = event_bbox_voxels(&e, &RobotDims::default(), &CollisionConfig::default(), 0.1);
        keys.sort();
        assert_eq!(keys.len(), 96);
        assert_eq!(keys, centers_in_box(&e, &RobotDims::default(), 0.1));
        let xs: std::collections::BTreeSet<_> = keys.iter().map(|k| k.i).collect();
        let ys: std::collections::BTreeSet<_> = keys.iter().map(|k| k.j).collect();
        assert_eq!((xs.len(), ys.len()), (4, 6));
    }

    #[test]
    fn collision_slab_spans_front_region() {
        // Chassis 0.8 m long: front plate at local x = 0.4.
        let dims = RobotDims::<f64> { length: 0.8, width: 0.4, height: 0.4 };
        let e = event(TraversalState::NonTraversable, [0.0, 0.0, 0.0], 0.0);
        let b = event_local_box(e.state, &dims, &CollisionConfig::default());
        assert!((b.min[0] - 0.3).abs() < 1e-12 && (b.max[0] - 0.6).abs() < 1e-12);
        let keys = event_bbox_voxels(&e, &dims, &CollisionConfig::default(), 0.1);
        let xs: std::collections::BTreeSet<_> = keys.iter().map(|k| k.i).collect();
        assert_eq!(xs.into_iter().collect::<Vec<_>>(), vec![3, 4, 5]);
        assert_eq!(keys.len(), 3 * 4 * 4);
    }

    #[test]
    fn oblique_box_contains_all_center_hits() {
        // Overlap is a superset of the center test at any yaw.
        for deg in [10.0f64, 33.0, 45.0, 120.0, 250.0] {
            let e = event(TraversalState::NonTraversable, [0.37, -0.12, 0.0], deg.to_radians());
            let keys = event_bbox_voxels(&e, &RobotDims::default(), &CollisionConfig::default(), 0.1);
            for k in centers_in_box(&e, &RobotDims::default(), 0.1) {
                assert!(keys.contains(&k));
            }
        }
    }

    #[test]
    fn inverse_model_examples() {
        let key = VoxelKey::new(0, 0, 0);
        let ntr = event(TraversalState::NonTraversable, [-0.35, 0.05, 0.0], 0.0);
        let tr = event(TraversalState::Traversable, [0.05, 0.05, 0.0], 0.0);

        let mut m = cmap();
        assert_eq!(m.p_ntr(&key), 0.5);
        m.apply_event(&ntr);
        m.apply_event(&ntr);
        assert!((m.p_ntr(&key) - 0.9).abs() < 1e-12);

        let mut m = cmap();
        m.apply_event(&tr);
        assert!((m.p_ntr(&key) - 0.3).abs() < 1e-12);

        let mut m = cmap();
        m.apply_event(&ntr);
        m.apply_event(&tr);
        assert!((m.p_ntr(&key) - 0.5625).abs() < 1e-12);
    }

    #[test]
    fn label_extraction() {
        let mut features = VoxelMap::with_resolution(0.1);
        let mut v = Voxel::default();
        v.n_miss = 2;
        features.insert(VoxelKey::new(0, 0, 0), v);
        features.insert(VoxelKey::new(1, 0, 0), v);

        let mut m = cmap();
        m.log_odds.insert(VoxelKey::new(0, 0, 0), log_odds(0.9));
        m.log_odds.insert(VoxelKey::new(1, 0, 0), 0.0);
        m.log_odds.insert(VoxelKey::new(2, 0, 0), log_odds(0.3)); // no features
        m.log_odds.insert(VoxelKey::new(1, 1, 0), log_odds(0.3));
        features.insert(VoxelKey::new(1, 1, 0), v);
        let labels = m.extract_labels(&features, 0.4, 0.6);
        assert_eq!(labels.len(), 2);
        assert_eq!((labels[0].key, labels[0].label), (VoxelKey::new(0, 0, 0), Label::NonTraversable));
        assert_eq!((labels[1].key, labels[1].label), (VoxelKey::new(1, 1, 0), Label::Traversable));
    }

    #[test]
    fn event_log_round_trip() {
        let events = vec![
            event(TraversalState::NonTraversable, [1.0, 2.0, 0.1], 0.7),
            event(TraversalState::Traversable, [1.5, 2.0, 0.1], -2.0),
        ];
        let mut buf = Vec::new();
        write_events_jsonl(&events, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"state\":\"NTR\"") && text.contains("\"quat\":["));
        let back: Vec<CollisionEvent<f64>> = read_events_jsonl(&buf[..]).unwrap();
        assert_eq!(back, events);
    }

    /// Sequential Bayes in probability space, clamped to the same band as the
    /// log-odds store.
    fn bayes_oracle(seq: &[bool]) -> f64 {
        let lo = 1.0 / (1.0 + 10f64.exp());
        let hi = 1.0 / (1.0 + (-10f64).exp());
        let mut p = 0.5f64;
        for &collide in seq {
            let q = if collide { 0.75 } else { 0.3 };
            p = p * q / (p * q + (1.0 - p) * (1.0 - q));
            p = p.clamp(lo, hi);
        }
        p
    }

    proptest! {
        #[test]
        fn posterior_matches_sequential_bayes(seq in prop::collection::vec(any::<bool>(), 0..50)) {
            let key = VoxelKey::new(0, 0, 0);
            let mut m = cmap();
            for &collide in &seq {
                let e = if collide {
                    event(TraversalState::NonTraversable, [-0.35, 0.05, 0.0], 0.0)
                } else {
                    event(TraversalState::Traversable, [0.05, 0.05, 0.0], 0.0)
                };
                m.apply_event(&e);
            }
            prop_assert!((m.p_ntr(&key) - bayes_oracle(&seq)).abs() < 1e-9);
        }

        #[test]
        fn monotone_and_commutative(
            seq in prop::collection::vec((any::<bool>(), -0.5f64..0.5, -0.5f64..0.5, 0.0f64..6.3), 1..9),
            rot in 0usize..9,
        ) {
            // Fewer than ten events never reach the clamp, so order cannot matter.
            let events: Vec<_> = seq.iter().enumerate().map(|(n, &(c, x, y, yaw))| CollisionEvent {
                t: n as f64,
                pose: Pose::from_yaw([x, y, 0.0], yaw),
                state: if c { TraversalState::NonTraversable } else { TraversalState::Traversable },
            }).collect();
            let mut a = cmap();
            for e in &events {
                let before: Vec<(VoxelKey, f64)> = a.keys_sorted().iter().map(|k| (*k, a.p_ntr(k))).collect();
                a.apply_event(e);
                for (k, p) in before {
                    match e.state {
                        TraversalState::NonTraversable => prop_assert!(a.p_ntr(&k) >= p),
                        TraversalState::Traversable => prop_assert!(a.p_ntr(&k) <= p),
                    }
                }
            }
            let mut rotated = events.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            rotated.reverse();
            let mut b = cmap();
            b.apply_events(&rotated);
            prop_assert_eq!(a.keys_sorted(), b.keys_sorted());
            for k in a.keys_sorted() {
                prop_assert!((a.log_odds(&k) - b.log_odds(&k)).abs() < 1e-12);
            }
            let labels = a.extract_labels(&AllObserved, 0.4, 0.6);
            let mut seen = std::collections::HashSet::new();
            for l in labels {
                prop_assert!(seen.insert(l.key));
            }
        }
    }

    struct AllObserved;
    impl FeatureSource<f64> for AllObserved {
        fn features_at(&self, _: &VoxelKey) -> Option<FeatureVector<f64>> {
            Some(FeatureVector([0.0; 16]))
        }
    }
}
