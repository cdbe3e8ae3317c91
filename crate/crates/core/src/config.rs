//! Experiment configuration: one TOML file with `[env]`, `[agent]`, `[vae]`,
//! `[noise]`, `[trainer]` and `[service]` sections.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ddpg::AgentConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::noise::OuConfig;
use crate::vae::VaeConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Actor and critic read the image through their shared conv trunk.
    Pixels,
    /// Actor and critic read the VAE latent mean.
    Vae,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pixels => "pixels",
            Self::Vae => "vae",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub seed: u64,
    pub representation: Representation,
    /// Initial train tasks driven by the random policy, without optimization.
    pub exploration_episodes: u64,
    /// Set-point of the zero policy and centre of the random policy, km/h.
    pub cruise_kmh: f64,
    /// Train tasks the automatic driver issues before finishing.
    pub train_episodes: u64,
    /// The automatic driver runs a test task after every this many train
    /// tasks once exploration is over.
    pub test_every: u64,
    /// Stop once the best test distance has not improved for this many tests.
    pub auto_stop_patience: Option<u64>,
    /// Stop after the first test task reaching this distance, metres.
    pub stop_at_test_m: Option<f64>,
    /// Write a checkpoint file after every this many tasks.
    pub checkpoint_every: Option<u64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            representation: Representation::Vae,
            exploration_episodes: 5,
            cruise_kmh: 10.0,
            train_episodes: 50,
            test_every: 1,
            auto_stop_patience: None,
            stop_at_test_m: None,
            checkpoint_every: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    /// Longest side of telemetry thumbnails, pixels (at most 128).
    pub thumbnail_px: usize,
    /// Outbound telemetry queue length; the oldest frames are dropped when full.
    pub telemetry_queue: usize,
    /// Serve mode waits for a console to issue tasks and confirm resets.
    pub human_driver: bool,
    /// Serve mode paces episodes at the policy rate.
    pub realtime: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { port: 8765, thumbnail_px: 128, telemetry_queue: 64, human_driver: false, realtime: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub vae: VaeConfig,
    pub noise: OuConfig,
    pub trainer: TrainerConfig,
    pub service: ServiceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            vae: VaeConfig::default(),
            noise: OuConfig::default(),
            trainer: TrainerConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

pub const PRESETS: &[&str] = &["paper-sim"];

impl ExperimentConfig {
    /// Named configuration presets.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-sim" => Ok(Self {
                name: "paper-sim".into(),
                agent: AgentConfig { actor_lr: 1e-3, critic_lr: 1e-3, ..AgentConfig::default() },
                ..Self::default()
            }),
            other => Err(Error::config(format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string().trim_end().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.noise.validate()?;
        if self.trainer.representation == Representation::Vae {
            self.vae.validate(self.env.camera.height, self.env.camera.width)?;
        }
        let t = &self.trainer;
        if !(t.cruise_kmh >= 0.0 && t.cruise_kmh <= self.env.max_speed_kmh) {
            return Err(Error::config("[trainer] cruise_kmh must be within [0, env.max_speed_kmh]"));
        }
        if t.test_every == 0 {
            return Err(Error::config("[trainer] test_every must be at least 1"));
        }
        if t.auto_stop_patience == Some(0) || t.checkpoint_every == Some(0) {
            return Err(Error::config("[trainer] auto_stop_patience and checkpoint_every must be at least 1"));
        }
        let s = &self.service;
        if s.thumbnail_px == 0 || s.thumbnail_px > 128 || s.telemetry_queue == 0 {
            return Err(Error::config("[service] thumbnail_px must be in 1..=128 and telemetry_queue positive"));
        }
        Ok(())
    }

    /// FNV-1a hash of the canonical TOML form, for the console handshake.
    pub fn hash_hex(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_toml().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
