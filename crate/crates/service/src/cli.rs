use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use lanerl_core::config::{ExperimentConfig, Representation};
use lanerl_core::env::DoneReason;
use lanerl_core::trainer::{
    run_experiment, script_from_log, AutoOracle, EpisodeLog, ExperimentReport, Observer, RunOptions, SafetyDriver,
    StepTelemetry, TaskKind, TaskOutcome,
};
use lanerl_core::{env::RoadSpec, Error};
use log::{error, info};

use crate::bridge::{Announced, ConsoleDriver, Hub, TelemetryObserver};
use crate::server::Server;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Automatic oracle, no network.
    Headless,
    /// Console endpoint; tasks come from a console with --human.
    Serve,
    /// Re-run a logged experiment from its directory (--out).
    Replay,
}

#[derive(Debug, Parser)]
#[command(name = "lanerl", version, about = "Train a lane-following agent from camera images")]
pub struct Args {
    #[arg(long, value_enum, default_value_t = Mode::Headless)]
    pub mode: Mode,
    /// Experiment TOML; the preset is used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "paper-sim")]
    pub preset: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train tasks issued by the automatic oracle.
    #[arg(long)]
    pub episodes: Option<u64>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// Experiment directory (default runs/<name>-<representation>-seed<N>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write every rendered frame and VAE reconstructions as PNG.
    #[arg(long)]
    pub dump_frames: bool,
    #[arg(long, conflicts_with = "vae")]
    pub pixels: bool,
    #[arg(long)]
    pub vae: bool,
    /// Serve mode waits for console tasks, resets and interventions.
    #[arg(long)]
    pub human: bool,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

/// Exit status for configuration and usage errors.
pub const EXIT_CONFIG: i32 = 2;

pub fn build_config(args: &Args) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
            other => other,
        })?,
        None => ExperimentConfig::preset(&args.preset)?,
    };
    if let Some(s) = args.seed {
        cfg.trainer.seed = s;
    }
    if let Some(n) = args.episodes {
        cfg.trainer.train_episodes = n;
    }
    if let Some(p) = args.port {
        cfg.service.port = p;
    }
    if args.pixels {
        cfg.trainer.representation = Representation::Pixels;
    }
    if args.vae {
        cfg.trainer.representation = Representation::Vae;
    }
    if args.human {
        cfg.service.human_driver = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_out(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from("runs").join(format!(
        "{}-{}-seed{}",
        cfg.name,
        cfg.trainer.representation.as_str(),
        cfg.trainer.seed
    ))
}

/// Logs one line per task.
struct Progress<'a> {
    inner: Option<&'a mut dyn Observer>,
}

impl Observer for Progress<'_> {
    fn episode_started(&mut self, id: u64, task: TaskKind, road: &Arc<RoadSpec>) {
        if let Some(o) = self.inner.as_mut() {
            o.episode_started(id, task, road);
        }
    }

    fn step(&mut self, t: &StepTelemetry) {
        if let Some(o) = self.inner.as_mut() {
            o.step(t);
        }
    }

    fn episode_ended(&mut self, id: u64, reason: DoneReason, distance: f64) {
        if let Some(o) = self.inner.as_mut() {
            o.episode_ended(id, reason, distance);
        }
    }

    fn task_finished(&mut self, outcome: &TaskOutcome) {
        match outcome {
            TaskOutcome::Episode(r) => info!(
                "episode {} {} {:.1} m in {} steps ({:?}){}",
                r.episode_id,
                r.task.as_str(),
                r.distance,
                r.steps,
                r.done_reason,
                r.mean_td.map(|td| format!(", mean TD {td:.4}")).unwrap_or_default()
            ),
            TaskOutcome::Undone { record } => info!("episode {} undone", record.episode_id),
            TaskOutcome::Rejected { reason, .. } => info!("task rejected: {reason}"),
        }
        if let Some(o) = self.inner.as_mut() {
            o.task_finished(outcome);
        }
    }
}

fn report(out: &Path, r: &ExperimentReport) {
    let s = &r.summary;
    info!(
        "{} train / {} test episodes, best test {:.1} m, {} disengagements; artifacts in {}",
        s.training_episodes,
        s.test_episodes,
        s.best_test_m,
        s.disengagements,
        out.display()
    );
}

/// Serves consoles while `driver` runs the experiment.
fn serve(
    cfg: ExperimentConfig,
    bind: &str,
    read_only: bool,
    driver: impl FnOnce(crossbeam_channel::Receiver<crate::protocol::ClientMessage>) -> Box<dyn SafetyDriver>,
    opts: &RunOptions,
) -> Result<ExperimentReport, Error> {
    let hub = Arc::new(Hub::new(cfg.hash_hex(), cfg.name.clone(), read_only, cfg.service.telemetry_queue));
    let (tx, rx) = crossbeam_channel::bounded(1024);
    let server = Server::start(&format!("{bind}:{}", cfg.service.port), Arc::clone(&hub), tx)?;
    info!("console endpoint ws://{}", server.local_addr());
    let period = cfg.service.realtime.then(|| Duration::from_secs_f64(cfg.env.policy_dt()));
    let mut telemetry = TelemetryObserver::new(Arc::clone(&hub), cfg.service.thumbnail_px, period);
    let mut driver = Announced::new(driver(rx), Arc::clone(&hub));
    let result = run_experiment(cfg, &mut driver, &mut Progress { inner: Some(&mut telemetry) }, opts);
    server.shutdown();
    result
}

pub fn run(args: &Args) -> i32 {
    let cfg = match args.mode {
        Mode::Replay => {
            let Some(dir) = &args.out else {
                error!("replay needs the experiment directory (--out)");
                return EXIT_CONFIG;
            };
            match ExperimentConfig::load(&dir.join("config.toml")) {
                Ok(c) => c,
                Err(e) => {
                    error!("{e}");
                    return EXIT_CONFIG;
                }
            }
        }
        _ => match build_config(args) {
            Ok(c) => c,
            Err(e) => {
                error!("{e}");
                return EXIT_CONFIG;
            }
        },
    };
    if args.print_config {
        print!("{}", cfg.to_toml());
        return 0;
    }
    let result = match args.mode {
        Mode::Headless => {
            let out = args.out.clone().unwrap_or_else(|| default_out(&cfg));
            let opts = RunOptions { out_dir: Some(out.clone()), dump_frames: args.dump_frames };
            let mut driver = AutoOracle::new(&cfg.trainer);
            run_experiment(cfg, &mut driver, &mut Progress { inner: None }, &opts).map(|r| report(&out, &r))
        }
        Mode::Serve => {
            let out = args.out.clone().unwrap_or_else(|| default_out(&cfg));
            let opts = RunOptions { out_dir: Some(out.clone()), dump_frames: args.dump_frames };
            let human = cfg.service.human_driver;
            let oracle = AutoOracle::new(&cfg.trainer);
            serve(
                cfg,
                &args.bind,
                !human,
                |rx| if human { Box::new(ConsoleDriver::new(rx)) } else { Box::new(oracle) },
                &opts,
            )
            .map(|r| report(&out, &r))
        }
        Mode::Replay => replay(cfg, args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            1
        }
    }
}

/// Re-runs the logged command sequence into `<dir>/replay` and checks that
/// the new log matches the original.
fn replay(cfg: ExperimentConfig, args: &Args) -> Result<(), Error> {
    let dir = args.out.as_ref().expect("checked by run");
    let text = std::fs::read_to_string(dir.join("episodes.jsonl"))?;
    let logged = EpisodeLog::from_jsonl(&text)?;
    let script = script_from_log(&logged);
    let opts = RunOptions { out_dir: Some(dir.join("replay")), dump_frames: args.dump_frames };
    let report = match args.port {
        Some(port) => {
            let mut cfg = cfg;
            cfg.service.port = port;
            serve(cfg, &args.bind, true, |_| Box::new(script), &opts)?
        }
        None => run_experiment(cfg, &mut { script }, &mut Progress { inner: None }, &opts)?,
    };
    if report.log != logged {
        return Err(Error::Contract(format!("replay of {} diverged from its episode log", dir.display())));
    }
    info!("replayed {} episodes identically into {}", logged.records.len(), dir.join("replay").display());
    Ok(())
}
