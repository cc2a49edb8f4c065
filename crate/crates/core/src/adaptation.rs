//! Fixed-interval online training cycles.
//!
//! The controller ingests scans, poses and collision events as they
//! arrive. Every `delta_t` seconds of stream time it closes the current
//! interval into a map batch, grows the experience graph, trains a model
//! and publishes it. Where training starts from is set by the strategy:
//! a pre-trained base model or a random one, continued across cycles or
//! restarted every cycle.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision_map::{CollisionConfig, CollisionEvent, CollisionMap, Label, RobotDims};
use crate::error::{Error, Result};
use crate::experience_graph::{GraphParams, MapBatch, OGraph, StampedPose};
use crate::metrics::Confusion;
use crate::real::{Real, Vec3};
use crate::te_model::{fill_stencil, train, TEModel, TrainConfig, TrainSample, STENCIL_DIM};
use crate::voxel_map::{key_map, FeatureSource, KeyMap, LidarReturn, MapConfig, VoxelKey, VoxelMap};

/// Where each cycle's training starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub use_base_model: bool,
    pub continuous_adaptation: bool,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy { use_base_model: false, continuous_adaptation: false },
        Strategy { use_base_model: false, continuous_adaptation: true },
        Strategy { use_base_model: true, continuous_adaptation: false },
        Strategy { use_base_model: true, continuous_adaptation: true },
    ];

    pub fn new(use_base_model: bool, continuous_adaptation: bool) -> Self {
        Self { use_base_model, continuous_adaptation }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bm{}ca{}", u8::from(self.use_base_model), u8::from(self.continuous_adaptation))
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}` (expected bm0ca0, bm0ca1, bm1ca0 or bm1ca1)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    /// Stream time between training cycles, s.
    pub delta_t: f64,
    /// Optimizer settings; `epochs` is the per-cycle epoch count.
    pub train: TrainConfig,
    /// Upper bound on training voxels per cycle.
    pub max_train_samples: usize,
    pub tr_threshold: f64,
    pub ntr_threshold: f64,
    /// Seed of the randomly initialised start model.
    pub seed: u64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            delta_t: 40.0,
            train: TrainConfig::default(),
            max_train_samples: 4096,
            tr_threshold: 0.4,
            ntr_threshold: 0.6,
            seed: 0,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_t > 0.0) {
            return Err(Error::Config(format!("delta_t must be positive, got {}", self.delta_t)));
        }
        if self.max_train_samples == 0 {
            return Err(Error::Config("max_train_samples must be at least 1".into()));
        }
        if !(self.tr_threshold < self.ntr_threshold) {
            return Err(Error::Config("tr_threshold must be below ntr_threshold".into()));
        }
        self.train.validate()
    }
}

/// Shared handle to the most recently published model. Readers get a
/// complete parameter set; publication swaps the whole model at once.
#[derive(Clone, Debug)]
pub struct ModelSlot<T>(Arc<RwLock<Arc<TEModel<T>>>>);

impl<T> ModelSlot<T> {
    pub fn new(model: TEModel<T>) -> Self {
        Self(Arc::new(RwLock::new(Arc::new(model))))
    }

    pub fn load(&self) -> Arc<TEModel<T>> {
        Arc::clone(&self.0.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn publish(&self, model: TEModel<T>) {
        *self.0.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(model);
    }
}

/// Voxels whose ground-truth label is known, used to score a model.
#[derive(Clone, Debug, Default)]
pub struct EvalSet {
    pub labels: Vec<(VoxelKey, Label)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mcc: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

/// Scores `model` on the labelled voxels that have features in `src`.
pub fn evaluate<T: Real, F: FeatureSource<T> + ?Sized>(
    model: &TEModel<T>,
    src: &F,
    labels: &[(VoxelKey, Label)],
    threshold: f64,
) -> Result<Evaluation> {
    let keys: Vec<VoxelKey> = labels.iter().map(|(k, _)| *k).collect();
    let p = model.predict_map(src, &keys)?;
    let threshold = T::lit(threshold);
    let mut confusion = Confusion::default();
    for (key, actual) in labels {
        if let Some(p) = p.get(key) {
            let predicted = if *p >= threshold { Label::Traversable } else { Label::NonTraversable };
            confusion.add(predicted, *actual);
        }
    }
    if confusion.total() == 0 {
        return Err(Error::NoLabels);
    }
    Ok(Evaluation { mcc: confusion.mcc(), f1: confusion.f1(), confusion })
}

/// One line of the cycle report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: usize,
    pub t_k: f64,
    pub n_new_nodes: usize,
    pub n_samples: usize,
    pub epoch_losses: Vec<f64>,
    pub mcc: Option<f64>,
    pub f1: Option<f64>,
    /// False when the cycle had no labelled data and kept the old model.
    pub trained: bool,
    /// Batches merged into this cycle (more than one after an overrun).
    pub merged_batches: usize,
}

/// Labelled stencils from the experience graph. A voxel stored in several
/// nodes contributes once, from the node holding its newest statistics.
/// Above `cap`, non-traversable voxels are kept first (up to half the cap)
/// and both classes are subsampled with `seed`.
pub fn graph_training_set<T: Real>(
    graph: &OGraph<T>,
    tr_threshold: T,
    ntr_threshold: T,
    cap: usize,
    seed: u64,
) -> Vec<TrainSample<T>> {
    let mut best: KeyMap<(T, usize, Label)> = key_map();
    for sample in graph.training_samples(tr_threshold, ntr_threshold) {
        let node = sample.node;
        for lv in sample.labels {
            let t = node.submap[&lv.key].voxel.last_update;
            match best.get_mut(&lv.key) {
                Some(b) if t > b.0 => *b = (t, node.id as usize, lv.label),
                Some(_) => {}
                None => {
                    best.insert(lv.key, (t, node.id as usize, lv.label));
                }
            }
        }
    }
    let mut tr: Vec<VoxelKey> = Vec::new();
    let mut ntr: Vec<VoxelKey> = Vec::new();
    for (k, (_, _, label)) in &best {
        match label {
            Label::Traversable => tr.push(*k),
            Label::NonTraversable => ntr.push(*k),
        }
    }
    tr.sort_unstable();
    ntr.sort_unstable();
    if tr.len() + ntr.len() > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ntr.shuffle(&mut rng);
        tr.shuffle(&mut rng);
        let n_ntr = ntr.len().min(cap.div_ceil(2).max(cap.saturating_sub(tr.len())));
        ntr.truncate(n_ntr);
        tr.truncate(cap - n_ntr);
        tr.sort_unstable();
        ntr.sort_unstable();
    }
    let nodes = graph.nodes();
    ntr.into_iter()
        .chain(tr)
        .filter_map(|key| {
            let (_, node, label) = best[&key];
            let mut input = vec![T::zero(); STENCIL_DIM];
            fill_stencil(&nodes[node], &key, &mut input).then_some(TrainSample { input, label })
        })
        .collect()
}

/// One strategy's model and cycle history.
#[derive(Clone, Debug)]
pub struct Learner<T> {
    strategy: Strategy,
    slot: ModelSlot<T>,
    reports: Vec<CycleReport>,
}

impl<T: Real> Learner<T> {
    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn model(&self) -> Arc<TEModel<T>> {
        self.slot.load()
    }

    pub fn model_slot(&self) -> ModelSlot<T> {
        self.slot.clone()
    }

    pub fn reports(&self) -> &[CycleReport] {
        &self.reports
    }
}

/// State of one online adaptation run. Several strategies can share the
/// map, collision map and graph; each keeps its own model.
pub struct AdaptationController<T: Real> {
    config: CycleConfig,
    map: VoxelMap<T>,
    cmap: CollisionMap<T>,
    graph: OGraph<T>,
    learners: Vec<Learner<T>>,
    base: Option<TEModel<T>>,
    fresh: TEModel<T>,
    batch: MapBatch<T>,
    pending: Vec<MapBatch<T>>,
    events: Vec<CollisionEvent<T>>,
    last_pose: Option<StampedPose<T>>,
    t_last: T,
    cycle: usize,
    eval: Option<EvalSet>,
}

impl<T: Real> AdaptationController<T> {
    /// `base` is required when the strategy uses a base model. The stream
    /// starts at `t0`.
    pub fn new(
        strategy: Strategy,
        config: CycleConfig,
        map_config: MapConfig<T>,
        graph_params: GraphParams<T>,
        dims: RobotDims<T>,
        base: Option<TEModel<T>>,
        t0: T,
    ) -> Result<Self> {
        Self::with_strategies(&[strategy], config, map_config, graph_params, dims, base, t0)
    }

    /// Runs every strategy in `strategies` over the same stream.
    pub fn with_strategies(
        strategies: &[Strategy],
        config: CycleConfig,
        map_config: MapConfig<T>,
        graph_params: GraphParams<T>,
        dims: RobotDims<T>,
        base: Option<TEModel<T>>,
        t0: T,
    ) -> Result<Self> {
        config.validate()?;
        if strategies.is_empty() {
            return Err(Error::Config("no strategy given".into()));
        }
        if let Some(s) = strategies.iter().find(|s| s.use_base_model && base.is_none()) {
            return Err(Error::Config(format!("strategy {s} needs a base model")));
        }
        let fresh = TEModel::init(config.seed);
        let learners = strategies
            .iter()
            .map(|&strategy| {
                let initial = if strategy.use_base_model { base.clone().expect("checked above") } else { fresh.clone() };
                Learner { strategy, slot: ModelSlot::new(initial), reports: Vec::new() }
            })
            .collect();
        let res = map_config.resolution;
        Ok(Self {
            config,
            map: VoxelMap::new(map_config),
            cmap: CollisionMap::new(CollisionConfig::default(), dims, res),
            graph: OGraph::new(graph_params, map_config),
            learners,
            base,
            fresh,
            batch: MapBatch::new(map_config, (t0, t0)),
            pending: Vec::new(),
            events: Vec::new(),
            last_pose: None,
            t_last: t0,
            cycle: 0,
            eval: None,
        })
    }

    pub fn set_eval(&mut self, set: EvalSet) {
        self.eval = Some(set);
    }

    /// Strategy of the first learner.
    pub fn strategy(&self) -> Strategy {
        self.learners[0].strategy
    }

    pub fn config(&self) -> &CycleConfig {
        &self.config
    }

    pub fn learners(&self) -> &[Learner<T>] {
        &self.learners
    }

    pub fn map(&self) -> &VoxelMap<T> {
        &self.map
    }

    pub fn collision_map(&self) -> &CollisionMap<T> {
        &self.cmap
    }

    pub fn graph(&self) -> &OGraph<T> {
        &self.graph
    }

    pub fn model_slot(&self) -> ModelSlot<T> {
        self.learners[0].model_slot()
    }

    pub fn model(&self) -> Arc<TEModel<T>> {
        self.learners[0].model()
    }

    pub fn reports(&self) -> &[CycleReport] {
        &self.learners[0].reports
    }

    pub fn cycle(&self) -> usize {
        self.cycle
    }

    /// Start of the open interval.
    pub fn t_last(&self) -> T {
        self.t_last
    }

    pub fn ingest_pose(&mut self, pose: StampedPose<T>) {
        self.batch.poses.push(pose);
        self.last_pose = Some(pose);
    }

    /// Integrates a scan and stitches the local map around the latest pose
    /// into the open batch.
    pub fn ingest_scan(&mut self, t: T, origin: &Vec3<T>, returns: &[LidarReturn<T>]) {
        let report = self.map.integrate_scan(origin, returns, t);
        if report.skipped > 0 {
            debug!("scan at t={t}: {} non-finite returns skipped", report.skipped);
        }
        let center = self.last_pose.map_or(*origin, |p| p.pose.position);
        let cyl = self.graph.params().cylinder(center);
        let local = self.map.local_snapshot(&center, cyl.r_max, cyl.z_min, cyl.z_max);
        self.batch.absorb_snapshot(t, &local);
    }

    pub fn ingest_event(&mut self, event: CollisionEvent<T>) {
        self.events.push(event);
    }

    /// Whether a cycle is due at stream time `t`.
    pub fn cycle_due(&self, t: T) -> bool {
        t - self.t_last >= T::lit(self.config.delta_t)
    }

    /// Closes the open interval at `t_k` without training; its batch is
    /// merged into the next cycle.
    pub fn defer_cycle(&mut self, t_k: T) {
        let mut closed = std::mem::replace(&mut self.batch, MapBatch::new(*self.map.config(), (t_k, t_k)));
        closed.interval = (self.t_last, t_k);
        self.pending.push(closed);
        self.t_last = t_k;
        info!("cycle deferred at t={t_k}; {} batch(es) pending", self.pending.len());
    }

    fn start_model(&self, learner: &Learner<T>) -> TEModel<T> {
        match (learner.strategy.continuous_adaptation, learner.strategy.use_base_model) {
            (true, _) if self.cycle > 0 => (*learner.slot.load()).clone(),
            (_, true) => self.base.clone().expect("base model present"),
            (_, false) => self.fresh.clone(),
        }
    }

    /// Runs one training cycle ending at `t_k` and returns one report per
    /// learner.
    pub fn run_cycle(&mut self, t_k: T) -> Result<Vec<CycleReport>> {
        self.cmap.apply_events(self.events.iter());
        self.events.clear();

        self.defer_cycle(t_k);
        let pending = std::mem::take(&mut self.pending);
        let merged_batches = pending.len();
        let mut batch = MapBatch::merge(pending).expect("at least the batch just closed");
        batch.annotate(&self.cmap);
        let update = self.graph.update_graph(&batch);

        let (tr, ntr) = (T::lit(self.config.tr_threshold), T::lit(self.config.ntr_threshold));
        let cycle_seed = self.config.train.seed ^ (self.cycle as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let samples = graph_training_set(&self.graph, tr, ntr, self.config.max_train_samples, cycle_seed);

        let mut reports = Vec::with_capacity(self.learners.len());
        for i in 0..self.learners.len() {
            let learner = &self.learners[i];
            let mut report = CycleReport {
                cycle: self.cycle,
                t_k: t_k.to_f64_lossy(),
                n_new_nodes: update.new_nodes,
                n_samples: samples.len(),
                epoch_losses: Vec::new(),
                mcc: None,
                f1: None,
                trained: false,
                merged_batches,
            };
            if samples.is_empty() {
                info!("cycle {} ({}): no labelled samples, keeping the current model", self.cycle, learner.strategy);
            } else {
                let cfg = TrainConfig { seed: cycle_seed, ..self.config.train.clone() };
                let out = train(&self.start_model(learner), &samples, &cfg)?;
                report.epoch_losses = out.epoch_losses;
                report.trained = true;
                learner.slot.publish(out.model);
                info!(
                    "cycle {} ({}): {} samples, {} new nodes, final loss {:.4}",
                    self.cycle,
                    learner.strategy,
                    samples.len(),
                    update.new_nodes,
                    report.epoch_losses.last().copied().unwrap_or(f64::NAN)
                );
            }
            if let Some(set) = &self.eval {
                match evaluate(&*learner.slot.load(), &self.map, &set.labels, 0.5) {
                    Ok(e) => {
                        report.mcc = Some(e.mcc);
                        report.f1 = Some(e.f1);
                    }
                    Err(Error::NoLabels) => debug!("cycle {}: no evaluation voxels observed yet", self.cycle),
                    Err(e) => return Err(e),
                }
            }
            self.learners[i].reports.push(report.clone());
            reports.push(report);
        }
        self.cycle += 1;
        Ok(reports)
    }
}
