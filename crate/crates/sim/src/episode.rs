//! Operator scripts, episode recording and the on-disk episode log.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vegnav_core::collision_map::{CollisionEvent, Pose, TraversalState};
use vegnav_core::experience_graph::StampedPose;
use vegnav_core::voxel_map::LidarReturn;

use crate::error::{Result, SimError};
use crate::lidar::{simulate_scan, LidarConfig};
use crate::robot::{footprint_blocked, step_robot, Command, RobotState};
use crate::world::World;

pub const EPISODE_FORMAT_VERSION: u32 = 1;

/// Bytes per point in the side-car file.
pub const POINT_RECORD_LEN: usize = 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Drive,
    DeliberateCollide,
    BackOff,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub behavior: Behavior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<[f64; 2]>,
    /// Reverse distance of a back-off leg, m.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

impl Leg {
    pub fn drive(x: f64, y: f64) -> Self {
        Self { behavior: Behavior::Drive, to: Some([x, y]), distance: None }
    }

    pub fn collide(x: f64, y: f64) -> Self {
        Self { behavior: Behavior::DeliberateCollide, to: Some([x, y]), distance: None }
    }

    pub fn back_off(distance: f64) -> Self {
        Self { behavior: Behavior::BackOff, to: None, distance: Some(distance) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorScript {
    /// `[x, y, yaw]`.
    pub start: [f64; 3],
    pub speed: f64,
    pub legs: Vec<Leg>,
    /// Region kept out of the robot's way for evaluation, `[x0, y0, x1, y1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<[f64; 4]>,
}

impl OperatorScript {
    pub fn validate(&self, world: &World) -> Result<()> {
        if !(self.speed > 0.0) {
            return Err(SimError::Config(format!("speed must be positive, got {}", self.speed)));
        }
        let points = std::iter::once([self.start[0], self.start[1]]).chain(self.legs.iter().filter_map(|l| l.to));
        for p in points {
            if !world.contains_xy(p[0], p[1]) {
                return Err(SimError::OutsideWorld(p[0], p[1]));
            }
        }
        for l in &self.legs {
            if l.behavior != Behavior::BackOff && l.to.is_none() {
                return Err(SimError::Config(format!("{:?} leg needs a `to` waypoint", l.behavior)));
            }
        }
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub dt: f64,
    pub scan_rate: f64,
    pub lidar: LidarConfig,
    /// Reverse distance after a drive leg ends against an obstacle, m.
    pub recover_distance: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { dt: 0.05, scan_rate: 2.0, lidar: LidarConfig::default(), recover_distance: 0.5 }
    }
}

impl EpisodeConfig {
    fn steps_per_scan(&self) -> u64 {
        (1.0 / (self.scan_rate * self.dt)).round().max(1.0) as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub t: f64,
    pub origin: [f64; 3],
    pub yaw: f64,
    pub returns: Vec<LidarReturn<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    Pose(StampedPose<f64>),
    Scan(Scan),
    Event(CollisionEvent<f64>),
}

impl Record {
    pub fn t(&self) -> f64 {
        match self {
            Record::Pose(p) => p.t,
            Record::Scan(s) => s.t,
            Record::Event(e) => e.t,
        }
    }
}

/// Time-ordered stream of poses, scans and collision events.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub world_seed: u64,
    pub seed: u64,
    pub records: Vec<Record>,
}

impl EpisodeLog {
    pub fn poses(&self) -> impl Iterator<Item = &StampedPose<f64>> {
        self.records.iter().filter_map(|r| match r {
            Record::Pose(p) => Some(p),
            _ => None,
        })
    }

    pub fn scans(&self) -> impl Iterator<Item = &Scan> {
        self.records.iter().filter_map(|r| match r {
            Record::Scan(s) => Some(s),
            _ => None,
        })
    }

    pub fn events(&self) -> impl Iterator<Item = &CollisionEvent<f64>> {
        self.records.iter().filter_map(|r| match r {
            Record::Event(e) => Some(e),
            _ => None,
        })
    }

    pub fn duration(&self) -> f64 {
        self.records.last().map_or(0.0, Record::t)
    }

    /// Horizontal path length of the logged poses.
    pub fn path_length(&self) -> f64 {
        let p: Vec<_> = self.poses().map(|p| p.pose.position).collect();
        p.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum()
    }
}

/// Steps the robot through one leg, calling `on_step` after every step with
/// the step index. A drive leg that ends against an obstacle is followed
/// by a short reverse.
fn run_leg(
    world: &World,
    state: &mut RobotState,
    leg: &Leg,
    speed: f64,
    cfg: &EpisodeConfig,
    step: &mut u64,
    on_step: &mut dyn FnMut(&RobotState, Option<CollisionEvent<f64>>, u64),
) {
    let dt = cfg.dt;
    let mut advance = |state: &mut RobotState, cmd: Command, step: &mut u64| {
        state.t = *step as f64 * dt;
        let (mut next, mut ev) = step_robot(world, state, cmd, dt);
        *step += 1;
        next.t = *step as f64 * dt;
        if let Some(e) = ev.as_mut() {
            e.t = next.t;
        }
        *state = next;
        on_step(state, ev, *step);
    };
    match leg.behavior {
        Behavior::BackOff => {
            let distance = leg.distance.unwrap_or(cfg.recover_distance);
            let n = (distance / (speed * dt)).round() as u64;
            for _ in 0..n {
                advance(state, Command::BackOff { v: speed }, step);
                if state.stuck {
                    break;
                }
            }
        }
        Behavior::Drive | Behavior::DeliberateCollide => {
            let to = leg.to.expect("validated waypoint");
            let dist0 = (to[0] - state.x).hypot(to[1] - state.y);
            let limit = ((dist0 / speed * 1.5 + 2.0) / dt).ceil() as u64;
            for _ in 0..limit {
                let (dx, dy) = (to[0] - state.x, to[1] - state.y);
                let d = dx.hypot(dy);
                if d < speed * dt {
                    break;
                }
                advance(state, Command::Drive { v: speed, yaw: dy.atan2(dx) }, step);
                if state.stuck {
                    break;
                }
            }
            if state.stuck && leg.behavior == Behavior::Drive {
                let n = (cfg.recover_distance / (speed * dt)).round() as u64;
                for _ in 0..n {
                    advance(state, Command::BackOff { v: speed }, step);
                    if state.stuck {
                        break;
                    }
                }
            }
        }
    }
}

/// Points go through single precision so a log read back from disk equals
/// the one recorded.
fn quantize(returns: Vec<LidarReturn<f64>>) -> Vec<LidarReturn<f64>> {
    returns
        .into_iter()
        .map(|r| LidarReturn {
            endpoint: r.endpoint.map(|v| v as f32 as f64),
            intensity: r.intensity as f32 as f64,
            is_second_return: r.is_second_return,
        })
        .collect()
}

/// Drives the script, scanning at `cfg.scan_rate`. All randomness comes
/// from `seed`.
pub fn run_episode(world: &World, script: &OperatorScript, cfg: &EpisodeConfig, seed: u64) -> Result<EpisodeLog> {
    script.validate(world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = RobotState::new(script.start[0], script.start[1], script.start[2]);
    let mut records = vec![Record::Pose(StampedPose { t: 0.0, pose: state.pose(world) })];
    let per_scan = cfg.steps_per_scan();
    let mut step = 0u64;
    for leg in &script.legs {
        let mut on_step = |s: &RobotState, ev: Option<CollisionEvent<f64>>, n: u64| {
            if let Some(e) = ev {
                records.push(Record::Event(e));
            }
            if n % per_scan == 0 {
                let pose = s.pose(world);
                records.push(Record::Pose(StampedPose { t: s.t, pose }));
                let mut origin = pose.position;
                origin[2] += cfg.lidar.mount_height;
                let returns = quantize(simulate_scan(world, &cfg.lidar, origin, s.yaw, &mut rng));
                records.push(Record::Scan(Scan { t: s.t, origin, yaw: s.yaw, returns }));
            }
        };
        run_leg(world, &mut state, leg, script.speed, cfg, &mut step, &mut on_step);
    }
    Ok(EpisodeLog { world_seed: world.seed, seed, records })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    /// Target episode length, s.
    pub duration: f64,
    pub speed: f64,
    /// A deliberate collision is attempted every this many legs.
    pub collide_every: usize,
    pub holdout: Option<[f64; 4]>,
    /// Clearance kept from the holdout region, m.
    pub holdout_margin: f64,
    pub seed: u64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self { duration: 480.0, speed: 0.5, collide_every: 3, holdout: None, holdout_margin: 2.5, seed: 0 }
    }
}

fn in_rect(r: &[f64; 4], margin: f64, x: f64, y: f64) -> bool {
    x >= r[0] - margin && x <= r[2] + margin && y >= r[1] - margin && y <= r[3] + margin
}

/// The upper-right quadrant of a world.
pub fn default_holdout(world: &World) -> [f64; 4] {
    let h = world.extent / 2.0;
    [h, h, world.extent, world.extent]
}

/// Random-walk script that covers the world outside the holdout region
/// and regularly drives into trunks and rigid bushes from whatever side
/// the robot happens to approach.
pub fn coverage_script(world: &World, cfg: &CoverageConfig) -> Result<OperatorScript> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let margin = 1.0;
    let e = world.extent;
    let forbidden = |x: f64, y: f64| cfg.holdout.is_some_and(|h| in_rect(&h, cfg.holdout_margin, x, y));
    let dims = RobotState::new(0.0, 0.0, 0.0).dims;
    let mut start = None;
    for _ in 0..10_000 {
        let (x, y) = (rng.random_range(margin..e - margin), rng.random_range(margin..e - margin));
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        if !forbidden(x, y) && !footprint_blocked(world, &dims, x, y, yaw) {
            start = Some([x, y, yaw]);
            break;
        }
    }
    let start = start.ok_or_else(|| SimError::Infeasible("no free start position".into()))?;
    let ep = EpisodeConfig::default();
    let mut state = RobotState::new(start[0], start[1], start[2]);
    let mut step = 0u64;
    let mut legs = Vec::new();
    let segment_ok = |ax: f64, ay: f64, bx: f64, by: f64| {
        let n = ((bx - ax).hypot(by - ay) / 0.25).ceil().max(1.0) as usize;
        (0..=n).all(|i| {
            let f = i as f64 / n as f64;
            !forbidden(ax + f * (bx - ax), ay + f * (by - ay))
        })
    };
    let push = |leg: Leg, state: &mut RobotState, step: &mut u64, legs: &mut Vec<Leg>| {
        run_leg(world, state, &leg, cfg.speed, &ep, step, &mut |_, _, _| {});
        legs.push(leg);
    };
    let mut n_legs = 0usize;
    while (step as f64) * ep.dt < cfg.duration {
        n_legs += 1;
        let collide = cfg.collide_every > 0 && n_legs % cfg.collide_every == 0;
        if collide {
            // Nearest rigid target in reach whose approach stays clear of
            // the holdout region.
            let targets = world
                .trunks
                .iter()
                .map(|t| t.center)
                .chain(world.veg.iter().filter(|v| !v.pliable).map(|v| [v.center[0], v.center[1]]));
            let mut best: Option<([f64; 2], f64)> = None;
            for c in targets {
                let d = (c[0] - state.x).hypot(c[1] - state.y);
                if (1.0..6.0).contains(&d) && segment_ok(state.x, state.y, c[0], c[1]) && best.is_none_or(|b| d < b.1) {
                    best = Some((c, d));
                }
            }
            if let Some((c, _)) = best {
                push(Leg::collide(c[0], c[1]), &mut state, &mut step, &mut legs);
                push(Leg::back_off(0.8), &mut state, &mut step, &mut legs);
                continue;
            }
        }
        let mut target = None;
        for _ in 0..200 {
            let len = rng.random_range(2.0..8.0);
            let ang = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let (x, y) = (state.x + len * ang.cos(), state.y + len * ang.sin());
            if x < margin || y < margin || x > e - margin || y > e - margin {
                continue;
            }
            if segment_ok(state.x, state.y, x, y) {
                target = Some([x, y]);
                break;
            }
        }
        let Some(t) = target else {
            push(Leg::back_off(0.5), &mut state, &mut step, &mut legs);
            continue;
        };
        push(Leg::drive(t[0], t[1]), &mut state, &mut step, &mut legs);
    }
    Ok(OperatorScript { start, speed: cfg.speed, legs, holdout: cfg.holdout })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LineRecord {
    Header { format_version: u32, world_seed: u64, seed: u64, points: String },
    Pose { t: f64, pos: [f64; 3], quat: [f64; 4] },
    Scan { t: f64, origin: [f64; 3], yaw: f64, offset: u64, count: u64 },
    Event { t: f64, pos: [f64; 3], quat: [f64; 4], state: TraversalState },
}

/// Side-car path: the log path with `.points` appended.
pub fn points_path(log: &Path) -> PathBuf {
    let mut s = log.as_os_str().to_owned();
    s.push(".points");
    PathBuf::from(s)
}

/// Writes the JSON Lines log to `path` and its point block to
/// [`points_path`]: little-endian `f32` x, y, z, intensity and a `u8`
/// return index per point.
pub fn write_episode(log: &EpisodeLog, path: &Path) -> Result<()> {
    let side = points_path(path);
    let mut w = BufWriter::new(File::create(path)?);
    let mut pw = BufWriter::new(File::create(&side)?);
    let name = side.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let line = |w: &mut BufWriter<File>, rec: &LineRecord| -> Result<()> {
        serde_json::to_writer(&mut *w, rec)?;
        w.write_all(b"\n")?;
        Ok(())
    };
    line(&mut w, &LineRecord::Header { format_version: EPISODE_FORMAT_VERSION, world_seed: log.world_seed, seed: log.seed, points: name })?;
    let mut offset = 0u64;
    for r in &log.records {
        let rec = match r {
            Record::Pose(p) => LineRecord::Pose { t: p.t, pos: p.pose.position, quat: p.pose.quat },
            Record::Event(e) => LineRecord::Event { t: e.t, pos: e.pose.position, quat: e.pose.quat, state: e.state },
            Record::Scan(s) => {
                for p in &s.returns {
                    let mut buf = [0u8; POINT_RECORD_LEN];
                    for (i, v) in [p.endpoint[0], p.endpoint[1], p.endpoint[2], p.intensity].iter().enumerate() {
                        buf[i * 4..i * 4 + 4].copy_from_slice(&(*v as f32).to_le_bytes());
                    }
                    buf[16] = u8::from(p.is_second_return);
                    pw.write_all(&buf)?;
                }
                let count = s.returns.len() as u64;
                let rec = LineRecord::Scan { t: s.t, origin: s.origin, yaw: s.yaw, offset, count };
                offset += count;
                rec
            }
        };
        line(&mut w, &rec)?;
    }
    w.flush()?;
    pw.flush()?;
    Ok(())
}

pub fn read_episode(path: &Path) -> Result<EpisodeLog> {
    let bad = |line: usize, reason: String| SimError::Format { line, reason };
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| bad(1, "empty log".into()))??;
    let LineRecord::Header { format_version, world_seed, seed, points } =
        serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?
    else {
        return Err(bad(1, "first line must be the header".into()));
    };
    if format_version != EPISODE_FORMAT_VERSION {
        return Err(SimError::Version(format_version));
    }
    let side = path.parent().unwrap_or(Path::new(".")).join(points);
    let mut raw = Vec::new();
    File::open(&side)?.read_to_end(&mut raw)?;
    if raw.len() % POINT_RECORD_LEN != 0 {
        return Err(bad(1, format!("point file length {} is not a multiple of {POINT_RECORD_LEN}", raw.len())));
    }
    let point = |i: usize| {
        let b = &raw[i * POINT_RECORD_LEN..(i + 1) * POINT_RECORD_LEN];
        let f = |k: usize| f32::from_le_bytes([b[k * 4], b[k * 4 + 1], b[k * 4 + 2], b[k * 4 + 3]]) as f64;
        LidarReturn { endpoint: [f(0), f(1), f(2)], intensity: f(3), is_second_return: b[16] != 0 }
    };
    let n_points = (raw.len() / POINT_RECORD_LEN) as u64;
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LineRecord = serde_json::from_str(&line).map_err(|e| bad(n + 2, e.to_string()))?;
        records.push(match rec {
            LineRecord::Header { .. } => return Err(bad(n + 2, "duplicate header".into())),
            LineRecord::Pose { t, pos, quat } => Record::Pose(StampedPose { t, pose: Pose { position: pos, quat } }),
            LineRecord::Event { t, pos, quat, state } => Record::Event(CollisionEvent { t, pose: Pose { position: pos, quat }, state }),
            LineRecord::Scan { t, origin, yaw, offset, count } => {
                if offset + count > n_points {
                    return Err(bad(n + 2, "scan refers past the end of the point file".into()));
                }
                let returns = (offset..offset + count).map(|i| point(i as usize)).collect();
                Record::Scan(Scan { t, origin, yaw, returns })
            }
        });
    }
    Ok(EpisodeLog { world_seed, seed, records })
}
