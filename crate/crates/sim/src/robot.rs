//! Planar robot kinematics on the ground surface with rigid contact.

use vegnav_core::collision_map::{event_local_box, CollisionConfig, CollisionEvent, Pose, RobotDims, TraversalState};

use crate::world::World;

/// Period of traversal events while moving, s.
pub const TR_EVENT_PERIOD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub stuck: bool,
    pub dims: RobotDims<f64>,
    /// Time since the last traversal event.
    pub since_tr: f64,
    pub t: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw, stuck: false, dims: RobotDims::default(), since_tr: 0.0, t: 0.0 }
    }

    /// Base pose on the ground (yaw only).
    pub fn pose(&self, world: &World) -> Pose<f64> {
        Pose::from_yaw([self.x, self.y, world.ground.height(self.x, self.y)], self.yaw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Command {
    /// Turn to `yaw` and move at signed speed `v`, m/s.
    Drive { v: f64, yaw: f64 },
    /// Reverse at speed `v` (positive); clears a stuck state.
    BackOff { v: f64 },
    Stop,
}

/// Whether the robot-frame rectangle `[x0, x1] × [y0, y1]` placed at
/// `(x, y, yaw)` overlaps a trunk or a rigid core between the ground and
/// the chassis top.
pub fn rect_hits_rigid(world: &World, x: f64, y: f64, yaw: f64, rect: [f64; 4], height: f64) -> bool {
    let [x0, x1, y0, y1] = rect;
    let (s, c) = yaw.sin_cos();
    let to_local = |px: f64, py: f64| {
        let (dx, dy) = (px - x, py - y);
        (c * dx + s * dy, -s * dx + c * dy)
    };
    let reach = x0.abs().max(x1.abs()).hypot(y0.abs().max(y1.abs()));
    for t in &world.trunks {
        if (t.center[0] - x).hypot(t.center[1] - y) > reach + t.radius {
            continue;
        }
        let (lx, ly) = to_local(t.center[0], t.center[1]);
        let (qx, qy) = (lx.clamp(x0, x1), ly.clamp(y0, y1));
        if (lx - qx).hypot(ly - qy) < t.radius {
            return true;
        }
    }
    let g = world.ground.height(x, y);
    let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)].map(|(lx, ly)| [x + c * lx - s * ly, y + s * lx + c * ly]);
    for v in world.veg.iter().filter(|v| !v.pliable) {
        let r = v.core_radii();
        if (v.center[0] - x).hypot(v.center[1] - y) > reach + r[0].max(r[1]) {
            continue;
        }
        // Widest cross-section of the core inside the chassis height band.
        let z = v.center[2].clamp(g, g + height);
        let shrink = 1.0 - ((z - v.center[2]) / r[2]).powi(2);
        if shrink <= 0.0 {
            continue;
        }
        let (ax, ay) = (r[0] * shrink.sqrt(), r[1] * shrink.sqrt());
        let scaled = corners.map(|p| [(p[0] - v.center[0]) / ax, (p[1] - v.center[1]) / ay]);
        if polygon_meets_unit_disk(&scaled) {
            return true;
        }
    }
    false
}

/// Whether a convex polygon overlaps the open unit disk.
fn polygon_meets_unit_disk(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut sign = 0.0;
    let mut inside = true;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let cross = ex * -a[1] - ey * -a[0];
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                inside = false;
            }
        }
        let len2 = ex * ex + ey * ey;
        let t = if len2 > 0.0 { (-(a[0] * ex + a[1] * ey) / len2).clamp(0.0, 1.0) } else { 0.0 };
        if (a[0] + t * ex).hypot(a[1] + t * ey) < 1.0 {
            return true;
        }
    }
    inside
}

fn local_rect(state: TraversalState, dims: &RobotDims<f64>) -> [f64; 4] {
    let b = event_local_box(state, dims, &CollisionConfig::default());
    [b.min[0], b.max[0], b.min[1], b.max[1]]
}

/// Footprint overlap at a candidate placement.
pub fn footprint_blocked(world: &World, dims: &RobotDims<f64>, x: f64, y: f64, yaw: f64) -> bool {
    rect_hits_rigid(world, x, y, yaw, local_rect(TraversalState::Traversable, dims), dims.height)
}

/// Frontal slab overlap, the condition for recording a collision.
pub fn front_blocked(world: &World, dims: &RobotDims<f64>, x: f64, y: f64, yaw: f64) -> bool {
    rect_hits_rigid(world, x, y, yaw, local_rect(TraversalState::NonTraversable, dims), dims.height)
}

/// Advances the robot by `dt`. Rigid contact leaves the position where it
/// was and sets `stuck`; the first contact with the front of the chassis
/// records a collision. Moving freely records a traversal every
/// [`TR_EVENT_PERIOD`] seconds.
pub fn step_robot(world: &World, state: &RobotState, cmd: Command, dt: f64) -> (RobotState, Option<CollisionEvent<f64>>) {
    assert!(dt > 0.0, "dt must be positive");
    let mut next = *state;
    next.t += dt;
    let (v, yaw) = match cmd {
        Command::Stop => return (next, None),
        Command::Drive { v, yaw } => (v, yaw),
        Command::BackOff { v } => {
            next.stuck = false;
            next.since_tr = 0.0;
            (-v.abs(), state.yaw)
        }
    };
    if state.stuck && v > 0.0 {
        return (next, None);
    }
    let nx = state.x + v * dt * yaw.cos();
    let ny = state.y + v * dt * yaw.sin();
    if !world.contains_xy(nx, ny) || footprint_blocked(world, &state.dims, nx, ny, yaw) {
        next.stuck = true;
        next.since_tr = 0.0;
        let was_stuck = state.stuck;
        let hit_front = v > 0.0 && front_blocked(world, &state.dims, state.x, state.y, yaw);
        if !was_stuck && hit_front {
            let pose = Pose::from_yaw([state.x, state.y, world.ground.height(state.x, state.y)], yaw);
            next.yaw = yaw;
            return (next, Some(CollisionEvent { t: next.t, pose, state: TraversalState::NonTraversable }));
        }
        return (next, None);
    }
    next.x = nx;
    next.y = ny;
    next.yaw = yaw;
    if matches!(cmd, Command::BackOff { .. }) || v == 0.0 {
        return (next, None);
    }
    next.since_tr += dt;
    if next.since_tr >= TR_EVENT_PERIOD - 1e-9 {
        next.since_tr = 0.0;
        return (next, Some(CollisionEvent { t: next.t, pose: next.pose(world), state: TraversalState::Traversable }));
    }
    (next, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Ground, Trunk, WorldConfig};

    fn world_with_trunk() -> World {
        World {
            format_version: 1,
            seed: 0,
            extent: 30.0,
            ground: Ground::flat(30.0, 5.0, 0.0),
            trunks: vec![Trunk { center: [12.0, 10.0], radius: 0.2, base_z: -0.2, height: 5.0 }],
            veg: vec![],
            config: WorldConfig::default(),
        }
    }

    #[test]
    fn open_ground_kinematics() {
        let w = world_with_trunk();
        let mut s = RobotState::new(5.0, 5.0, 0.0);
        let mut events = Vec::new();
        for _ in 0..20 {
            let (n, e) = step_robot(&w, &s, Command::Drive { v: 0.5, yaw: 0.0 }, 0.05);
            s = n;
            events.extend(e);
        }
        assert!((s.x - 5.5).abs() < 1e-9);
        assert_eq!(events.len(), 2);
        assert!(events.iter().all(|e| e.state == TraversalState::Traversable));
    }

    #[test]
    fn trunk_blocks_and_records_once() {
        let w = world_with_trunk();
        let mut s = RobotState::new(10.5, 10.0, 0.0);
        let mut ntr = Vec::new();
        for _ in 0..200 {
            let (n, e) = step_robot(&w, &s, Command::Drive { v: 0.5, yaw: 0.0 }, 0.05);
            s = n;
            ntr.extend(e.filter(|e| e.state == TraversalState::NonTraversable));
        }
        assert!(s.stuck);
        assert_eq!(ntr.len(), 1);
        // Stopped short of the trunk surface.
        assert!(s.x + 0.3 <= 11.8 + 1e-9);
        let p = ntr[0].pose.position;
        assert!(front_blocked(&w, &s.dims, p[0], p[1], 0.0));
        let x_before = s.x;
        let (n, e) = step_robot(&w, &s, Command::Drive { v: 0.5, yaw: 0.0 }, 0.05);
        assert_eq!((n.x, e), (x_before, None));
        let (n, e) = step_robot(&w, &s, Command::BackOff { v: 0.5 }, 0.05);
        assert!(!n.stuck && e.is_none());
        assert!(n.x < x_before);
    }

    #[test]
    fn polygon_disk_overlap() {
        let square = |cx: f64, cy: f64, h: f64| [[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h]];
        assert!(polygon_meets_unit_disk(&square(0.0, 0.0, 5.0)));
        assert!(polygon_meets_unit_disk(&square(0.0, 0.0, 0.1)));
        assert!(!polygon_meets_unit_disk(&square(3.0, 0.0, 0.5)));
        // Corners all outside the disk, one edge through it.
        assert!(polygon_meets_unit_disk(&[[-2.0, 0.5], [2.0, 0.5], [2.0, 3.0], [-2.0, 3.0]]));
        // Tangent edge: the disk is open.
        assert!(!polygon_meets_unit_disk(&[[-2.0, 1.0], [2.0, 1.0], [2.0, 3.0], [-2.0, 3.0]]));
    }
}
