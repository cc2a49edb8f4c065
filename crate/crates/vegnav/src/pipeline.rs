//! Replaying recorded episodes through the online learner.

use anyhow::{Context, Result};
use log::info;
use vegnav_core::adaptation::{AdaptationController, CycleConfig, CycleReport, Strategy};
use vegnav_core::collision_map::{CollisionEvent, Pose, RobotDims};
use vegnav_core::experience_graph::{GraphParams, StampedPose};
use vegnav_core::te_model::{TEModel, TrainConfig};
use vegnav_core::voxel_map::{LidarReturn, MapConfig, VoxelMap};
use vegnav_sim::{coverage_script, generate_world, run_episode, CoverageConfig, EpisodeConfig, EpisodeLog, Record, World};

pub type Controller = AdaptationController<f32>;

/// Offset between a world's seed and its sibling's, the world the base
/// model is trained in.
pub const SIBLING_SEED_OFFSET: u64 = 0x51b1;

fn v3(p: [f64; 3]) -> [f32; 3] {
    p.map(|v| v as f32)
}

pub fn pose32(p: &Pose<f64>) -> Pose<f32> {
    Pose { position: v3(p.position), quat: p.quat.map(|v| v as f32) }
}

pub fn stamped32(p: &StampedPose<f64>) -> StampedPose<f32> {
    StampedPose { t: p.t as f32, pose: pose32(&p.pose) }
}

pub fn event32(e: &CollisionEvent<f64>) -> CollisionEvent<f32> {
    CollisionEvent { t: e.t as f32, pose: pose32(&e.pose), state: e.state }
}

pub fn returns32(r: &[LidarReturn<f64>]) -> Vec<LidarReturn<f32>> {
    r.iter()
        .map(|r| LidarReturn { endpoint: v3(r.endpoint), intensity: r.intensity as f32, is_second_return: r.is_second_return })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub cycle: CycleConfig,
    pub map: MapConfig<f32>,
    pub graph: GraphParams<f32>,
    pub dims: RobotDims<f32>,
}

pub fn controller(strategies: &[Strategy], cfg: &RunConfig, base: Option<TEModel<f32>>) -> Result<Controller> {
    Ok(AdaptationController::with_strategies(strategies, cfg.cycle.clone(), cfg.map, cfg.graph, cfg.dims, base, 0.0)?)
}

/// Streams `log` into `ctl`. A cycle runs whenever `delta_t` of stream time
/// has passed and once more at the end of the log for the remainder.
/// `after_cycle` sees the controller and the reports of every cycle.
pub fn replay(
    ctl: &mut Controller,
    log: &EpisodeLog,
    mut after_cycle: impl FnMut(&Controller, &[CycleReport]) -> Result<()>,
) -> Result<()> {
    let delta_t = ctl.config().delta_t as f32;
    for rec in &log.records {
        let t = rec.t() as f32;
        while ctl.cycle_due(t) {
            let t_k = ctl.t_last() + delta_t;
            let reports = ctl.run_cycle(t_k)?;
            after_cycle(ctl, &reports)?;
        }
        match rec {
            Record::Pose(p) => ctl.ingest_pose(stamped32(p)),
            Record::Event(e) => ctl.ingest_event(event32(e)),
            Record::Scan(s) => ctl.ingest_scan(s.t as f32, &v3(s.origin), &returns32(&s.returns)),
        }
    }
    let end = log.duration() as f32;
    if end > ctl.t_last() {
        let reports = ctl.run_cycle(end)?;
        after_cycle(ctl, &reports)?;
    }
    Ok(())
}

/// Integrates every scan of `log` up to time `t` into a fresh map.
pub fn map_until(log: &EpisodeLog, map: MapConfig<f32>, t: f64) -> (VoxelMap<f32>, Vec<StampedPose<f32>>) {
    let mut m = VoxelMap::new(map);
    let mut poses = Vec::new();
    for rec in log.records.iter().take_while(|r| r.t() <= t) {
        match rec {
            Record::Pose(p) => poses.push(stamped32(p)),
            Record::Scan(s) => {
                m.integrate_scan(&v3(s.origin), &returns32(&s.returns), s.t as f32);
            }
            Record::Event(_) => {}
        }
    }
    (m, poses)
}

#[derive(Clone, Debug)]
pub struct BaseConfig {
    /// Length of the recording in the sibling world, s.
    pub duration: f64,
    pub max_train_samples: usize,
    pub train: TrainConfig,
    pub episode: EpisodeConfig,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self { duration: 480.0, max_train_samples: 8192, train: TrainConfig::offline(), episode: EpisodeConfig::default() }
    }
}

/// The world a base model is trained in: same generator settings, another
/// seed.
pub fn sibling_world(world: &World) -> Result<World> {
    generate_world(&world.config, world.seed.wrapping_add(SIBLING_SEED_OFFSET)).context("generating the sibling world")
}

/// Trains a model offline on everything learned from one coverage run
/// through `world`.
pub fn train_base_model(world: &World, seed: u64, run: &RunConfig, cfg: &BaseConfig) -> Result<TEModel<f32>> {
    let script = coverage_script(world, &CoverageConfig { duration: cfg.duration, seed, ..CoverageConfig::default() })?;
    let log = run_episode(world, &script, &cfg.episode, seed)?;
    let cycle = CycleConfig {
        delta_t: log.duration() + 1.0,
        train: TrainConfig { seed, ..cfg.train.clone() },
        max_train_samples: cfg.max_train_samples,
        seed,
        ..run.cycle.clone()
    };
    let run = RunConfig { cycle, ..run.clone() };
    let mut ctl = controller(&[Strategy::new(false, false)], &run, None)?;
    replay(&mut ctl, &log, |_, r| {
        info!("base model: {} samples, final loss {:?}", r[0].n_samples, r[0].epoch_losses.last());
        Ok(())
    })?;
    anyhow::ensure!(ctl.reports().iter().any(|r| r.trained), "the base recording produced no labelled samples");
    Ok((*ctl.model()).clone())
}
