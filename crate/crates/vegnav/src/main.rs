use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use vegnav::harness::{run_harness, write_harness, EvalTarget, HarnessConfig};
use vegnav::pipeline::{controller, map_until, replay, RunConfig};
use vegnav::survey::{Region, SurveyConfig};
use vegnav_core::adaptation::{evaluate, Strategy};
use vegnav_core::costmap::{build_costmap, te_map_from, write_class_sidecar, write_costmap, CostmapParams, ReferenceZ};
use vegnav_core::te_model::{read_model, write_model, TEModel};
use vegnav_sim::{
    coverage_script, default_holdout, generate_world, read_episode, run_episode, write_episode, CoverageConfig, EpisodeConfig,
    OperatorScript, World, WorldConfig,
};

#[derive(Parser)]
#[command(name = "vegnav", version, about = "Online traversability learning in simulated vegetation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a world from a JSON config.
    GenWorld {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a coverage-drive operator script for a world.
    GenScript {
        #[arg(long)]
        world: PathBuf,
        /// Episode length, s.
        #[arg(long, default_value_t = 480.0)]
        duration: f64,
        #[arg(long)]
        seed: u64,
        /// Keep the robot out of this region, x0,y0,x1,y1 (default: upper-right quadrant).
        #[arg(long)]
        holdout: Option<Region>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive a script through a world and record the episode log.
    Episode {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay an episode through the online learner.
    Adapt {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        base_model: Option<PathBuf>,
        #[arg(long)]
        delta_t: f64,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a model against ground truth in a region; prints JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        region: Region,
        #[arg(long)]
        threshold: f64,
    },
    /// Build the 2D costmap of an episode at time t.
    Costmap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare all strategies over several seeds.
    Harness {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Bad invocation (exit 1) or bad data (exit 2).
enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

/// Radius around the robot covered by the costmap, m.
const COSTMAP_RADIUS: f32 = 10.0;

fn read_world(path: &Path) -> Result<World> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    World::read_json(BufReader::new(f)).with_context(|| format!("reading world {}", path.display()))
}

fn read_script(path: &Path) -> Result<OperatorScript> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    OperatorScript::read_json(BufReader::new(f)).with_context(|| format!("reading script {}", path.display()))
}

fn load_model(path: &Path) -> Result<TEModel<f32>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_model(BufReader::new(f)).with_context(|| format!("reading model {}", path.display()))
}

fn save_model(model: &TEModel<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn run(cmd: Cmd) -> std::result::Result<(), Failure> {
    match cmd {
        Cmd::GenWorld { config, seed, out } => {
            let f = File::open(&config).with_context(|| format!("opening {}", config.display()))?;
            let cfg: WorldConfig = serde_json::from_reader(BufReader::new(f)).context("reading world config")?;
            let world = generate_world(&cfg, seed)?;
            let mut w = create(&out)?;
            world.write_json(&mut w)?;
            w.flush().context("writing world")?;
            info!("{} trunks, {} vegetation clusters", world.trunks.len(), world.veg.len());
        }
        Cmd::GenScript { world, duration, seed, holdout, out } => {
            let world = read_world(&world)?;
            let h = holdout.map_or_else(|| default_holdout(&world), |r| [r.x0, r.y0, r.x1, r.y1]);
            let cfg = CoverageConfig { duration, holdout: Some(h), seed, ..CoverageConfig::default() };
            let script = coverage_script(&world, &cfg)?;
            let mut w = create(&out)?;
            script.write_json(&mut w)?;
            w.flush().context("writing script")?;
        }
        Cmd::Episode { world, script, seed, out } => {
            let world = read_world(&world)?;
            let script = read_script(&script)?;
            let log = run_episode(&world, &script, &EpisodeConfig::default(), seed)?;
            write_episode(&log, &out).context("writing episode")?;
            info!("{:.1} s, {} scans, {} events", log.duration(), log.scans().count(), log.events().count());
        }
        Cmd::Adapt { episode, strategy, base_model, delta_t, epochs, out_dir } => {
            let base = match (&base_model, strategy.use_base_model) {
                (Some(p), _) => Some(load_model(p)?),
                (None, true) => return Err(Failure::Usage(format!("strategy {strategy} needs --base-model"))),
                (None, false) => None,
            };
            let log = read_episode(&episode).with_context(|| format!("reading episode {}", episode.display()))?;
            let mut run = RunConfig::default();
            run.cycle.delta_t = delta_t;
            run.cycle.train.epochs = epochs;
            run.cycle.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut ctl = controller(&[strategy], &run, base)?;
            let mut reports = create(&out_dir.join("cycles.jsonl"))?;
            replay(&mut ctl, &log, |ctl, r| {
                serde_json::to_writer(&mut reports, &r[0])?;
                reports.write_all(b"\n")?;
                save_model(&ctl.model(), &out_dir.join(format!("model_cycle_{:03}.json", r[0].cycle)))
            })?;
            reports.flush().context("writing cycle reports")?;
            save_model(&ctl.model(), &out_dir.join("model.json"))?;
            info!("{} cycles", ctl.cycle());
        }
        Cmd::Eval { model, world, region, threshold } => {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(Failure::Usage(format!("threshold must lie in [0, 1], got {threshold}")));
            }
            let model = load_model(&model)?;
            let world = read_world(&world)?;
            let target = EvalTarget::new(&world, region, &SurveyConfig::default());
            let e = evaluate(&model, &target.map, &target.labels, threshold).context("scoring the model")?;
            println!("{}", serde_json::to_string(&e).context("encoding result")?);
        }
        Cmd::Costmap { model, episode, t, out } => {
            let model = load_model(&model)?;
            let log = read_episode(&episode).with_context(|| format!("reading episode {}", episode.display()))?;
            let (map, poses) = map_until(&log, RunConfig::default().map, t);
            let here = poses.last().context("no pose recorded before t")?.pose.position;
            let res = map.resolution();
            let keys: Vec<_> = map
                .keys_sorted()
                .into_iter()
                .filter(|k| {
                    let c = k.center(res);
                    map.get(k).is_some_and(|v| v.n_endpoints > 0) && (c[0] - here[0]).hypot(c[1] - here[1]) <= COSTMAP_RADIUS
                })
                .collect();
            let p = model.predict_map(&map, &keys)?;
            let te = te_map_from(&map, &p);
            let reference = ReferenceZ::Trajectory(poses.iter().map(|p| p.pose.position).collect());
            let cm = build_costmap(&te, res, &reference, &CostmapParams::default())?;
            let mut w = create(&out)?;
            write_costmap(&cm, &mut w)?;
            w.flush().context("writing costmap")?;
            let mut side = out.clone().into_os_string();
            side.push(".cls.json");
            let mut w = create(Path::new(&side))?;
            write_class_sidecar(&cm, &mut w)?;
            w.flush().context("writing class side-car")?;
        }
        Cmd::Harness { world, script, seeds, out_dir } => {
            let world = read_world(&world)?;
            let script = read_script(&script)?;
            let result = run_harness(&world, &script, &Strategy::ALL, &seeds, &HarnessConfig::default())?;
            write_harness(&result, &out_dir)?;
            for s in &result.summaries {
                println!("{} final MCC {:.4} ± {:.4}", s.strategy, s.final_mean, s.final_std);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VEGNAV_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
