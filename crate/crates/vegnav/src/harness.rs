//! Side-by-side comparison of the four training strategies.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use vegnav_core::adaptation::{evaluate, Strategy};
use vegnav_core::collision_map::Label;
use vegnav_core::voxel_map::{VoxelKey, VoxelMap};
use vegnav_core::Error as CoreError;
use vegnav_sim::{default_holdout, run_episode, EpisodeConfig, OperatorScript, World};

use crate::pipeline::{controller, replay, sibling_world, train_base_model, BaseConfig, RunConfig};
use crate::survey::{eval_labels, survey_map, Region, SurveyConfig};

#[derive(Clone, Debug, Default)]
pub struct HarnessConfig {
    pub run: RunConfig,
    pub base: BaseConfig,
    pub episode: EpisodeConfig,
    pub survey: SurveyConfig,
}

/// Held-out region and the labelled voxels scored in it.
pub struct EvalTarget {
    pub region: Region,
    pub map: VoxelMap<f32>,
    pub labels: Vec<(VoxelKey, Label)>,
}

impl EvalTarget {
    pub fn new(world: &World, region: Region, cfg: &SurveyConfig) -> Self {
        let map = survey_map(world, &region, cfg);
        let labels = eval_labels(world, &map, &region, cfg);
        Self { region, map, labels }
    }

    /// The script's holdout region, or the upper-right quadrant.
    pub fn for_script(world: &World, script: &OperatorScript, cfg: &SurveyConfig) -> Result<Self> {
        let region = Region::from_array(script.holdout.unwrap_or_else(|| default_holdout(world)))?;
        Ok(Self::new(world, region, cfg))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub strategy: String,
    pub seed: u64,
    pub cycle: usize,
    pub t_k: f64,
    pub mcc: f64,
    pub f1: f64,
    /// The cycle did not train; the value is carried over.
    pub stale: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    /// Cross-seed mean and standard deviation of MCC per cycle.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Last-cycle MCC of every seed.
    pub final_mcc: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessResult {
    pub seeds: Vec<u64>,
    pub region: Region,
    pub n_eval_voxels: usize,
    pub points: Vec<CurvePoint>,
    pub summaries: Vec<StrategySummary>,
}

impl HarnessResult {
    pub fn summary(&self, strategy: Strategy) -> Option<&StrategySummary> {
        let name = strategy.to_string();
        self.summaries.iter().find(|s| s.strategy == name)
    }
}

/// Population mean and standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs one seed of every strategy over the same episode and returns the
/// MCC curve of each, in `strategies` order.
pub fn run_seed(
    world: &World,
    script: &OperatorScript,
    strategies: &[Strategy],
    seed: u64,
    target: &EvalTarget,
    cfg: &HarnessConfig,
) -> Result<Vec<CurvePoint>> {
    let base = if strategies.iter().any(|s| s.use_base_model) {
        let sibling = sibling_world(world)?;
        Some(train_base_model(&sibling, seed, &cfg.run, &cfg.base)?)
    } else {
        None
    };
    let log = run_episode(world, script, &cfg.episode, seed)?;
    let mut run = cfg.run.clone();
    run.cycle.seed = seed;
    run.cycle.train.seed = seed;
    let mut ctl = controller(strategies, &run, base)?;
    let mut points: Vec<CurvePoint> = Vec::new();
    let mut last: Vec<Option<(f64, f64)>> = vec![None; strategies.len()];
    replay(&mut ctl, &log, |ctl, reports| {
        for (i, (learner, report)) in ctl.learners().iter().zip(reports).enumerate() {
            let stale = !report.trained;
            let (mcc, f1) = match last[i] {
                Some(prev) if stale => prev,
                _ => match evaluate(&*learner.model(), &target.map, &target.labels, 0.5) {
                    Ok(e) => (e.mcc, e.f1),
                    Err(CoreError::NoLabels) => (0.0, 0.0),
                    Err(e) => return Err(e.into()),
                },
            };
            last[i] = Some((mcc, f1));
            points.push(CurvePoint {
                strategy: learner.strategy().to_string(),
                seed,
                cycle: report.cycle,
                t_k: report.t_k,
                mcc,
                f1,
                stale,
            });
        }
        info!(
            "seed {seed} cycle {}: {}",
            reports[0].cycle,
            points.iter().rev().take(reports.len()).map(|p| format!("{} {:.3}", p.strategy, p.mcc)).collect::<Vec<_>>().join(", ")
        );
        Ok(())
    })?;
    Ok(points)
}

pub fn summarize(points: &[CurvePoint], strategies: &[Strategy], seeds: &[u64]) -> Vec<StrategySummary> {
    strategies
        .iter()
        .map(|s| {
            let name = s.to_string();
            let curves: Vec<Vec<f64>> = seeds
                .iter()
                .map(|seed| points.iter().filter(|p| p.strategy == name && p.seed == *seed).map(|p| p.mcc).collect())
                .collect();
            let n_cycles = curves.iter().map(Vec::len).max().unwrap_or(0);
            let (mut mean, mut std) = (Vec::new(), Vec::new());
            for k in 0..n_cycles {
                let at: Vec<f64> = curves.iter().filter_map(|c| c.get(k).copied()).collect();
                let (m, s) = mean_std(&at);
                mean.push(m);
                std.push(s);
            }
            let final_mcc: Vec<f64> = curves.iter().filter_map(|c| c.last().copied()).collect();
            let (final_mean, final_std) = mean_std(&final_mcc);
            StrategySummary { strategy: name, mean, std, final_mcc, final_mean, final_std }
        })
        .collect()
}

pub fn run_harness(
    world: &World,
    script: &OperatorScript,
    strategies: &[Strategy],
    seeds: &[u64],
    cfg: &HarnessConfig,
) -> Result<HarnessResult> {
    anyhow::ensure!(!seeds.is_empty(), "at least one seed is required");
    let target = EvalTarget::for_script(world, script, &cfg.survey)?;
    info!("evaluating on {} voxels in {}", target.labels.len(), target.region);
    let mut points = Vec::new();
    for &seed in seeds {
        points.extend(run_seed(world, script, strategies, seed, &target, cfg)?);
    }
    let summaries = summarize(&points, strategies, seeds);
    Ok(HarnessResult { seeds: seeds.to_vec(), region: target.region, n_eval_voxels: target.labels.len(), points, summaries })
}

/// Writes `curves.csv` (one row per strategy, seed and cycle) and
/// `summary.json` into `dir`.
pub fn write_harness(result: &HarnessResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
    for p in &result.points {
        w.serialize(p)?;
    }
    w.flush()?;
    let f = BufWriter::new(File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(f, result)?;
    Ok(())
}
