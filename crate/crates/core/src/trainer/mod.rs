//! Task-based training loop: a safety driver issues train, test, undo and
//! done tasks; the model is optimized between episodes.

mod driver;
mod log;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{Reader, Writer};
use crate::config::{ExperimentConfig, Representation};
use crate::ddpg::{perturb, AgentNets, StateBatch, StateInput, TransitionBatch, SCALARS};
use crate::env::{generate_road, Action, DoneReason, Env, Frame, Observation, RoadSpec, KMH};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::noise::{decay, OuNoise};
use crate::replay::{Experience, ReplayBuffer, StoredState};
use crate::vae::Vae;

pub use driver::{AutoOracle, DriverContext, SafetyDriver, ScriptedDriver, TaskCommand, TaskOutcome};
pub use log::{EpisodeLog, EpisodeRecord, PolicyKind, Summary, TaskKind, LOG_SCHEMA};

const CHECKPOINT_MAGIC: &[u8; 4] = b"LRCK";
const CHECKPOINT_VERSION: u32 = 1;

/// splitmix64 finalizer over `seed` and `stream`.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Road used for the episode with the given counter value.
pub fn road_seed(seed: u64, episode: u64) -> u64 {
    mix_seed(mix_seed(seed, 0x0052_4f41_44), episode)
}

/// Steering 0 at a fixed set-point.
pub fn zero_policy(cruise_kmh: f64) -> Action {
    Action::new(0.0, cruise_kmh)
}

/// Decayed OU noise around the zero policy's action, clamped to the action box.
pub fn random_policy(
    ou: &mut OuNoise,
    rng: &mut ChaCha8Rng,
    cruise_kmh: f64,
    speed_scale_kmh: f64,
    max_speed_kmh: f64,
) -> Action {
    perturb(zero_policy(cruise_kmh), &ou.next(rng), speed_scale_kmh, max_speed_kmh)
}

/// Everything undo restores. Cloned before every task.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub agent: AgentNets,
    pub vae: Option<Vae>,
    pub ou: OuNoise,
    pub replay: ReplayBuffer,
    pub rng_explore: ChaCha8Rng,
    pub rng_replay: ChaCha8Rng,
    pub rng_vae: ChaCha8Rng,
    /// Completed train and test episodes; indexes roads and the noise decay.
    pub episode_counter: u64,
    pub train_episodes: u64,
    pub optimize_rounds: u64,
}

fn write_rng(w: &mut Writer, rng: &ChaCha8Rng) {
    w.raw(&rng.get_seed());
    w.u64(rng.get_stream());
    let pos = rng.get_word_pos();
    w.u64(pos as u64);
    w.u64((pos >> 64) as u64);
}

fn read_rng(r: &mut Reader<'_>) -> Result<ChaCha8Rng> {
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(r.u64()?);
    let lo = r.u64()? as u128;
    let hi = r.u64()? as u128;
    rng.set_word_pos(lo | hi << 64);
    Ok(rng)
}

impl TrainerState {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.trainer.seed;
        let cam = &cfg.env.camera;
        let vae = match cfg.trainer.representation {
            Representation::Pixels => None,
            Representation::Vae => Some(Vae::new(&cfg.vae, cam.height, cam.width, mix_seed(seed, 5))?),
        };
        let input = match &vae {
            None => StateInput::Image { height: cam.height, width: cam.width },
            Some(v) => StateInput::Vector { dim: v.latent_dim() },
        };
        Ok(Self {
            agent: AgentNets::new(&cfg.agent, input, cfg.env.max_speed_kmh, mix_seed(seed, 4))?,
            vae,
            ou: OuNoise::from_config(&cfg.noise),
            replay: ReplayBuffer::new(cfg.agent.replay_capacity, cfg.agent.priority_floor)?,
            rng_explore: ChaCha8Rng::seed_from_u64(mix_seed(seed, 1)),
            rng_replay: ChaCha8Rng::seed_from_u64(mix_seed(seed, 2)),
            rng_vae: ChaCha8Rng::seed_from_u64(mix_seed(seed, 3)),
            episode_counter: 0,
            train_episodes: 0,
            optimize_rounds: 0,
        })
    }

    pub fn encode(&self, w: &mut Writer) {
        w.raw(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        self.agent.save(w);
        w.bool(self.vae.is_some());
        if let Some(v) = &self.vae {
            v.save(w);
        }
        self.ou.encode(w);
        self.replay.encode(w);
        for rng in [&self.rng_explore, &self.rng_replay, &self.rng_vae] {
            write_rng(w, rng);
        }
        w.u64(self.episode_counter);
        w.u64(self.train_episodes);
        w.u64(self.optimize_rounds);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_bytes()
    }

    /// Restores a checkpoint written for the same configuration.
    pub fn from_bytes(cfg: &ExperimentConfig, bytes: &[u8]) -> Result<Self> {
        let mut state = Self::new(cfg)?;
        let mut r = Reader::new(bytes);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::codec(format!("unsupported checkpoint version {version}")));
        }
        state.agent.load(&mut r)?;
        match (r.bool()?, &mut state.vae) {
            (true, Some(v)) => v.load(&mut r)?,
            (false, None) => {}
            _ => return Err(Error::codec("checkpoint representation differs from the configuration")),
        }
        state.ou = OuNoise::decode(&mut r)?;
        state.replay = ReplayBuffer::decode(&mut r)?;
        state.rng_explore = read_rng(&mut r)?;
        state.rng_replay = read_rng(&mut r)?;
        state.rng_vae = read_rng(&mut r)?;
        state.episode_counter = r.u64()?;
        state.train_episodes = r.u64()?;
        state.optimize_rounds = r.u64()?;
        r.finish()?;
        Ok(state)
    }
}

/// Per-step snapshot handed to observers. Observers cannot reach trainer state.
#[derive(Clone, Debug)]
pub struct StepTelemetry {
    pub episode_id: u64,
    pub task: TaskKind,
    /// Policy steps taken so far in the episode.
    pub step: usize,
    /// x, y (m), heading (rad).
    pub pose: [f64; 3],
    /// m/s
    pub speed: f64,
    pub action: Action,
    pub reward: f64,
    pub distance: f64,
    pub lane_offset: f64,
    pub frame: Arc<Frame>,
    pub buffer_size: usize,
    /// Mean TD error of the latest optimization round.
    pub mean_td: Option<f64>,
}

pub trait Observer {
    fn episode_started(&mut self, _episode_id: u64, _task: TaskKind, _road: &Arc<RoadSpec>) {}
    fn step(&mut self, _t: &StepTelemetry) {}
    /// The vehicle has stopped; optimization (if any) follows.
    fn episode_ended(&mut self, _episode_id: u64, _reason: DoneReason, _distance: f64) {}
    fn task_finished(&mut self, _outcome: &TaskOutcome) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl Observer for NoObserver {}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OptStats {
    pub steps: usize,
    pub mean_td: Option<f64>,
    pub vae_loss: Option<f64>,
}

pub struct Trainer {
    cfg: ExperimentConfig,
    env: Env,
    state: TrainerState,
    /// Pre-task state and the log index of the task it precedes.
    history: Option<(TrainerState, usize)>,
    log: EpisodeLog,
    next_episode_id: u64,
    last_mean_td: Option<f64>,
    dump_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let state = TrainerState::new(&cfg)?;
        let env = Env::new(cfg.env.clone())?;
        Ok(Self {
            cfg,
            env,
            state,
            history: None,
            log: EpisodeLog::default(),
            next_episode_id: 0,
            last_mean_td: None,
            dump_dir: None,
        })
    }

    /// Writes every rendered frame (and VAE reconstructions) under `dir`.
    pub fn dump_frames_to(&mut self, dir: impl Into<PathBuf>) {
        self.dump_dir = Some(dir.into());
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn can_undo(&self) -> bool {
        self.history.is_some()
    }

    pub fn context(&self) -> DriverContext {
        DriverContext {
            can_undo: self.can_undo(),
            train_episodes: self.state.train_episodes,
            episodes: self.state.episode_counter,
        }
    }

    pub fn checkpoint(&self) -> Vec<u8> {
        self.state.to_bytes()
    }

    /// Replaces the training state; undo history is cleared. Episode ids
    /// continue past every id the state already knows.
    pub fn restore(&mut self, bytes: &[u8]) -> Result<()> {
        self.state = TrainerState::from_bytes(&self.cfg, bytes)?;
        self.history = None;
        let stored = self.state.replay.iter().map(|e| e.episode_id + 1).max().unwrap_or(0);
        self.next_episode_id = self.next_episode_id.max(stored).max(self.state.episode_counter);
        Ok(())
    }

    /// Continues an experiment from its checkpoint and episode log.
    pub fn resume(cfg: ExperimentConfig, checkpoint: &[u8], log: EpisodeLog) -> Result<Self> {
        let mut trainer = Self::new(cfg)?;
        trainer.next_episode_id = log.records.iter().map(|r| r.episode_id + 1).max().unwrap_or(0);
        trainer.restore(checkpoint)?;
        trainer.log = log;
        Ok(trainer)
    }

    /// Runs one task. `Done` is a no-op returning `None`.
    pub fn run_task(
        &mut self,
        cmd: TaskCommand,
        driver: &mut dyn SafetyDriver,
        observer: &mut dyn Observer,
    ) -> Result<Option<TaskOutcome>> {
        Ok(match cmd {
            TaskCommand::Train => Some(TaskOutcome::Episode(self.run_episode(TaskKind::Train, driver, observer)?)),
            TaskCommand::Test => Some(TaskOutcome::Episode(self.run_episode(TaskKind::Test, driver, observer)?)),
            TaskCommand::Undo => Some(self.undo()),
            TaskCommand::Done => None,
        })
    }

    /// Restores the state from before the latest task and marks its log entry reverted.
    pub fn undo(&mut self) -> TaskOutcome {
        match self.history.take() {
            Some((state, index)) => {
                self.state = state;
                self.log.mark_reverted(index);
                TaskOutcome::Undone { record: self.log.records[index].clone() }
            }
            None => TaskOutcome::Rejected {
                command: TaskCommand::Undo,
                reason: "nothing to undo: no train or test task has completed since the last undo".into(),
            },
        }
    }

    fn policy_kind(&self, task: TaskKind) -> PolicyKind {
        match task {
            TaskKind::Test => PolicyKind::Optimal,
            TaskKind::Train if self.state.train_episodes < self.cfg.trainer.exploration_episodes => PolicyKind::Random,
            TaskKind::Train => PolicyKind::Noisy,
        }
    }

    fn state_batch(&self, ob: &Observation) -> Result<StateBatch> {
        let image = frames_tensor(std::iter::once(&*ob.image))?;
        let input = match &self.state.vae {
            Some(vae) => vae.encode_mean(&image)?,
            None => image,
        };
        let scalars = Tensor::from_vec(&[1, SCALARS], scalars(&self.cfg, ob.speed, ob.steering).to_vec())?;
        Ok(StateBatch { input, scalars })
    }

    fn choose_action(&mut self, policy: PolicyKind, ob: &Observation) -> Result<Action> {
        let max = self.cfg.env.max_speed_kmh;
        let scale = self.cfg.noise.speed_scale_kmh;
        Ok(match policy {
            PolicyKind::Random => {
                let s = &mut self.state;
                random_policy(&mut s.ou, &mut s.rng_explore, self.cfg.trainer.cruise_kmh, scale, max)
            }
            PolicyKind::Noisy => {
                let batch = self.state_batch(ob)?;
                let s = &mut self.state;
                s.agent.act_noisy(&batch, &mut s.ou, scale, &mut s.rng_explore)?
            }
            PolicyKind::Optimal => self.state.agent.act(&self.state_batch(ob)?)?,
        })
    }

    /// Runs one episode on the next road, stores its experiences for train
    /// tasks and optimizes once exploration is over.
    pub fn run_episode(
        &mut self,
        task: TaskKind,
        driver: &mut dyn SafetyDriver,
        observer: &mut dyn Observer,
    ) -> Result<EpisodeRecord> {
        let checkpoint = self.state.clone();
        let episode_id = self.next_episode_id;
        self.next_episode_id += 1;
        let counter = self.state.episode_counter;
        let policy = self.policy_kind(task);
        let seed = road_seed(self.cfg.trainer.seed, counter);
        let road = Arc::new(generate_road(seed, &self.cfg.env.road)?);

        let ou = &mut self.state.ou;
        ou.x.clone_from(&ou.mu);
        ou.episode_index = counter;

        let mut ob = self.env.reset(Arc::clone(&road));
        driver.confirm_reset();
        observer.episode_started(episode_id, task, &road);
        let frame_dir = self.episode_dump_dir(episode_id)?;

        // The latest transition is held back so an intervention can mark it terminal.
        let mut pending: Option<Experience> = None;
        let mut distance = 0.0;
        let done_reason = loop {
            if let Some(dir) = &frame_dir {
                ob.image.write_png(&dir.join(format!("{:04}.png", self.env.steps())))?;
            }
            if driver.intervene(self.env.steps()) {
                self.env.intervene()?;
                if let Some(p) = pending.as_mut() {
                    p.done = true;
                }
                break DoneReason::Intervention;
            }
            let action = self.choose_action(policy, &ob)?;
            let r = self.env.step(action)?;
            distance += r.reward;
            if task == TaskKind::Train {
                if let Some(p) = pending.take() {
                    self.state.replay.push(p);
                }
                pending = Some(Experience {
                    state: stored(&ob),
                    action: [action.steering as f32, action.speed_kmh as f32],
                    reward: r.reward,
                    done: r.done_reason.is_terminal(),
                    next_state: stored(&r.observation),
                    episode_id,
                });
            }
            let v = self.env.vehicle();
            observer.step(&StepTelemetry {
                episode_id,
                task,
                step: self.env.steps(),
                pose: [v.position[0], v.position[1], v.heading],
                speed: v.speed,
                action,
                reward: r.reward,
                distance,
                lane_offset: r.lane_offset,
                frame: Arc::clone(&r.observation.image),
                buffer_size: self.state.replay.len() + pending.is_some() as usize,
                mean_td: self.last_mean_td,
            });
            ob = r.observation;
            if r.done {
                if let Some(dir) = &frame_dir {
                    ob.image.write_png(&dir.join(format!("{:04}.png", self.env.steps())))?;
                }
                break r.done_reason;
            }
        };
        if let Some(p) = pending {
            self.state.replay.push(p);
        }
        let steps = self.env.steps();
        observer.episode_ended(episode_id, done_reason, distance);

        self.state.episode_counter += 1;
        let mut stats = OptStats::default();
        if task == TaskKind::Train {
            self.state.train_episodes += 1;
            if self.state.train_episodes > self.cfg.trainer.exploration_episodes {
                stats = self.optimize()?;
                self.last_mean_td = stats.mean_td;
            }
        }
        if let (Some(dir), Some(vae)) = (&frame_dir, &self.state.vae) {
            let recon = vae.reconstruct(&frames_tensor(std::iter::once(&*ob.image))?)?;
            tensor_frame(&recon, ob.image.width, ob.image.height).write_png(&dir.join("reconstruction.png"))?;
        }

        let record = EpisodeRecord {
            schema: LOG_SCHEMA,
            episode_id,
            task,
            policy,
            noisy: policy != PolicyKind::Optimal,
            episode_index: counter,
            noise_decay: decay(counter, self.cfg.noise.half_life),
            road_seed: seed,
            distance,
            steps,
            duration_s: steps as f64 * self.cfg.env.policy_dt(),
            done_reason,
            opt_steps: stats.steps,
            mean_td: stats.mean_td,
            vae_loss: stats.vae_loss,
            buffer_size: self.state.replay.len(),
            reverted: false,
        };
        let index = self.log.push(record.clone());
        self.history = Some((checkpoint, index));
        Ok(record)
    }

    fn episode_dump_dir(&self, episode_id: u64) -> Result<Option<PathBuf>> {
        let Some(root) = &self.dump_dir else { return Ok(None) };
        let dir = root.join(format!("episode_{episode_id:05}"));
        std::fs::create_dir_all(&dir)?;
        Ok(Some(dir))
    }

    /// One round of `opt_steps_per_episode` updates on prioritized batches.
    pub fn optimize(&mut self) -> Result<OptStats> {
        let cfg = &self.cfg;
        let s = &mut self.state;
        if s.replay.is_empty() {
            return Err(Error::contract("optimize with an empty replay buffer"));
        }
        let update_vae = s.vae.is_some() && (cfg.vae.train_online || s.optimize_rounds == 0);
        let (mut td_sum, mut vae_sum) = (0.0, 0.0);
        let steps = cfg.agent.opt_steps_per_episode;
        for _ in 0..steps {
            let sampled = s.replay.sample(cfg.agent.batch_size, &mut s.rng_replay)?;
            let images = frames_tensor(sampled.tuples.iter().map(|e| &*e.state.frame))?;
            let next_images = frames_tensor(sampled.tuples.iter().map(|e| &*e.next_state.frame))?;
            let n = sampled.tuples.len();
            let mut sc = Vec::with_capacity(n * SCALARS);
            let mut next_sc = Vec::with_capacity(n * SCALARS);
            let mut actions = Vec::with_capacity(n * 2);
            for e in &sampled.tuples {
                sc.extend(scalars(cfg, e.state.speed as f64, e.state.steering as f64));
                next_sc.extend(scalars(cfg, e.next_state.speed as f64, e.next_state.steering as f64));
                actions.extend(s.agent.normalize(e.action[0] as f64, e.action[1] as f64));
            }
            let rewards = sampled.tuples.iter().map(|e| e.reward).collect();
            let dones = sampled.tuples.iter().map(|e| e.done).collect();
            let indices = sampled.indices;

            let (input, next_input) = match &mut s.vae {
                None => (images, next_images),
                Some(vae) => {
                    let next = vae.encode_mean(&next_images)?;
                    // The step's latent means come from the encoder before its
                    // update, as if the VAE were updated after the agent.
                    let cur = if update_vae {
                        let step = vae.update(&images, &mut s.rng_vae)?;
                        vae_sum += step.terms.loss;
                        step.mu
                    } else {
                        vae.encode_mean(&images)?
                    };
                    (cur, next)
                }
            };
            let batch = TransitionBatch {
                states: StateBatch { input, scalars: Tensor::from_vec(&[n, SCALARS], sc)? },
                actions: Tensor::from_vec(&[n, 2], actions)?,
                rewards,
                dones,
                next_states: StateBatch { input: next_input, scalars: Tensor::from_vec(&[n, SCALARS], next_sc)? },
            };
            let step = s.agent.train_step(&batch)?;
            s.replay.update_priorities(&indices, &step.td_errors)?;
            td_sum += step.td_errors.iter().sum::<f64>() / n as f64;
        }
        s.optimize_rounds += 1;
        Ok(OptStats {
            steps,
            mean_td: (steps > 0).then(|| td_sum / steps as f64),
            vae_loss: (update_vae && steps > 0).then(|| vae_sum / steps as f64),
        })
    }

    /// Distances of optimal-policy episodes on roads `road_seed(seed, 0..n)`.
    /// Training state is left untouched.
    pub fn evaluate(&mut self, seed: u64, episodes: u64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(episodes as usize);
        for i in 0..episodes {
            let road = Arc::new(generate_road(road_seed(seed, i), &self.cfg.env.road)?);
            let mut ob = self.env.reset(road);
            loop {
                let action = self.state.agent.act(&self.state_batch(&ob)?)?;
                let r = self.env.step(action)?;
                ob = r.observation;
                if r.done {
                    break;
                }
            }
            out.push(self.env.distance_along());
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Zero,
    Random,
}

/// Distances of a baseline policy on roads `road_seed(seed, 0..n)`. The random
/// policy's noise decays with the episode index.
pub fn evaluate_baseline(cfg: &ExperimentConfig, baseline: Baseline, seed: u64, episodes: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut env = Env::new(cfg.env.clone())?;
    let mut ou = OuNoise::from_config(&cfg.noise);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 6));
    let mut out = Vec::with_capacity(episodes as usize);
    for i in 0..episodes {
        env.reset(Arc::new(generate_road(road_seed(seed, i), &cfg.env.road)?));
        ou.x.clone_from(&ou.mu);
        ou.episode_index = i;
        loop {
            let action = match baseline {
                Baseline::Zero => zero_policy(cfg.trainer.cruise_kmh),
                Baseline::Random => random_policy(
                    &mut ou,
                    &mut rng,
                    cfg.trainer.cruise_kmh,
                    cfg.noise.speed_scale_kmh,
                    cfg.env.max_speed_kmh,
                ),
            };
            if env.step(action)?.done {
                break;
            }
        }
        out.push(env.distance_along());
    }
    Ok(out)
}

/// `[speed / max speed, normalized steering]`.
fn scalars(cfg: &ExperimentConfig, speed_ms: f64, steering: f64) -> [f32; 2] {
    [(speed_ms / (cfg.env.max_speed_kmh * KMH)) as f32, steering as f32]
}

fn stored(ob: &Observation) -> StoredState {
    StoredState { frame: Arc::clone(&ob.image), speed: ob.speed as f32, steering: ob.steering as f32 }
}

/// Stacks frames into `[n, 1, h, w]` with unit intensities.
fn frames_tensor<'a>(frames: impl Iterator<Item = &'a Frame>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut dims = None;
    for f in frames {
        if *dims.get_or_insert((f.height, f.width)) != (f.height, f.width) {
            return Err(Error::contract("frames differ in size"));
        }
        data.extend(f.pixels.iter().map(|&p| p as f32 / 255.0));
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| Error::contract("no frames"))?;
    Tensor::from_vec(&[n, 1, h, w], data)
}

fn tensor_frame(t: &Tensor, width: usize, height: usize) -> Frame {
    let pixels = t.row(0).iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Frame { width, height, pixels }
}

/// Options for [`run_experiment`].
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Experiment directory; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    pub dump_frames: bool,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub log: EpisodeLog,
    pub summary: Summary,
    pub checkpoint: Vec<u8>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Requests tasks from `driver` until it answers done. Writes the config
/// copy, `episodes.jsonl`, `metrics.csv`, `summary.csv` and checkpoints into
/// the experiment directory.
pub fn run_experiment(
    cfg: ExperimentConfig,
    driver: &mut dyn SafetyDriver,
    observer: &mut dyn Observer,
    opts: &RunOptions,
) -> Result<ExperimentReport> {
    let mut trainer = Trainer::new(cfg)?;
    let model = trainer.cfg.trainer.representation.as_str();
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir.join("checkpoints"))?;
        write_file(&dir.join("config.toml"), trainer.cfg.to_toml().as_bytes())?;
        write_file(&dir.join("episodes.jsonl"), b"")?;
        if opts.dump_frames {
            trainer.dump_frames_to(dir.join("frames"));
        }
    }
    let mut tasks = 0u64;
    loop {
        let cmd = driver.next_task(&trainer.context());
        let Some(outcome) = trainer.run_task(cmd, driver, observer)? else { break };
        driver.task_finished(&outcome);
        observer.task_finished(&outcome);
        tasks += 1;
        if let Some(dir) = &opts.out_dir {
            write_file(&dir.join("episodes.jsonl"), trainer.log.to_jsonl().as_bytes())?;
            if trainer.cfg.trainer.checkpoint_every.is_some_and(|k| tasks % k == 0) {
                write_file(&dir.join("checkpoints").join(format!("task_{tasks:05}.ckpt")), &trainer.checkpoint())?;
            }
        }
    }
    let summary = trainer.log.summary(model);
    let checkpoint = trainer.checkpoint();
    if let Some(dir) = &opts.out_dir {
        write_file(&dir.join("episodes.jsonl"), trainer.log.to_jsonl().as_bytes())?;
        write_file(&dir.join("metrics.csv"), trainer.log.metrics_csv().as_bytes())?;
        write_file(&dir.join("summary.csv"), format!("{}{}", Summary::CSV_HEADER, summary.csv_row()).as_bytes())?;
        write_file(&dir.join("checkpoints").join("final.ckpt"), &checkpoint)?;
    }
    Ok(ExperimentReport { log: trainer.log, summary, checkpoint })
}

/// Command list and intervention points that reproduce a logged run with a
/// [`ScriptedDriver`].
pub fn script_from_log(log: &EpisodeLog) -> ScriptedDriver {
    let mut commands = Vec::new();
    let mut interventions = Vec::new();
    for r in &log.records {
        if r.done_reason == DoneReason::Intervention {
            interventions.push((commands.len(), r.steps));
        }
        commands.push(match r.task {
            TaskKind::Train => TaskCommand::Train,
            TaskKind::Test => TaskCommand::Test,
        });
        if r.reverted {
            commands.push(TaskCommand::Undo);
        }
    }
    interventions.into_iter().fold(ScriptedDriver::new(commands), |d, (i, step)| d.intervene_at(i, step))
}
