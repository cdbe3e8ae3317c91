//! Deterministic actor-critic learner over a shared convolutional trunk or a
//! precomputed feature vector.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::env::Action;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, clip_global_norm, conv_trunk, soft_update, Activation, AdamState, LayerSpec, Network, ParamSet, Tape, Tensor,
};
use crate::noise::OuNoise;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub opt_steps_per_episode: usize,
    /// Global L2 norm threshold applied to each update's gradients.
    pub grad_clip: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub conv_features: usize,
    pub conv_layers: usize,
    pub hidden: usize,
    /// Init bound multiplier for the actor and critic output layers.
    pub output_init_gain: f64,
    pub replay_capacity: usize,
    pub priority_floor: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            batch_size: 64,
            opt_steps_per_episode: 250,
            grad_clip: 0.005,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            conv_features: 16,
            conv_layers: 4,
            hidden: 8,
            output_init_gain: 0.1,
            replay_capacity: 100_000,
            priority_floor: 1e-3,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ((0.0..=1.0).contains(&self.gamma), "gamma must be in [0, 1]"),
            (self.batch_size >= 1, "batch_size must be at least 1"),
            (self.grad_clip > 0.0, "grad_clip must be positive"),
            (self.tau > 0.0 && self.tau <= 1.0, "tau must be in (0, 1]"),
            (self.actor_lr > 0.0 && self.critic_lr > 0.0, "learning rates must be positive"),
            (self.conv_features >= 1 && self.conv_layers >= 1, "conv trunk needs at least one layer and feature"),
            (self.hidden >= 1, "hidden must be at least 1"),
            (self.output_init_gain >= 0.0, "output_init_gain must be non-negative"),
            (self.replay_capacity >= 1, "replay_capacity must be at least 1"),
            (self.priority_floor > 0.0, "priority_floor must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::config(format!("[agent] {msg}"))),
            None => Ok(()),
        }
    }
}

/// What the actor and critic consume besides the two scalars.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateInput {
    /// Single-channel images, encoded by the agent's own conv trunk.
    Image { height: usize, width: usize },
    /// Externally computed feature vectors, e.g. VAE latent means.
    Vector { dim: usize },
}

/// Number of scalar state entries: speed fraction and normalized steering.
pub const SCALARS: usize = 2;
/// Action dimensions: steering in `[-1, 1]` and speed fraction in `[0, 1]`.
pub const ACTION_DIM: usize = 2;

/// A batch of agent states.
#[derive(Clone, Debug, PartialEq)]
pub struct StateBatch {
    /// `[B, 1, H, W]` in image mode, `[B, dim]` in vector mode.
    pub input: Tensor,
    /// `[B, 2]`: speed over max speed, normalized steering.
    pub scalars: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBatch {
    pub states: StateBatch,
    /// `[B, 2]` normalized actions.
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub next_states: StateBatch,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub trunk: Option<ParamSet>,
    pub actor: ParamSet,
    pub critic: ParamSet,
}

impl NetParams {
    fn encode(&self, w: &mut Writer) {
        w.bool(self.trunk.is_some());
        if let Some(t) = &self.trunk {
            t.encode(w);
        }
        self.actor.encode(w);
        self.critic.encode(w);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let trunk = if r.bool()? { Some(ParamSet::decode(r)?) } else { None };
        Ok(Self { trunk, actor: ParamSet::decode(r)?, critic: ParamSet::decode(r)? })
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.as_ref().is_none_or(ParamSet::is_finite) && self.actor.is_finite() && self.critic.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentAdam {
    pub trunk: Option<AdamState>,
    pub actor: AdamState,
    pub critic: AdamState,
}

/// Result of one critic step.
#[derive(Clone, Debug)]
pub struct CriticStep {
    /// `|Q(s, a) − y|` per tuple, before the step.
    pub td_errors: Vec<f64>,
    pub loss: f64,
    /// Trunk output for the batch states, computed before the step.
    pub features: Tensor,
}

/// Online and target networks with their optimizers.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentNets {
    pub config: AgentConfig,
    pub input: StateInput,
    pub max_speed_kmh: f64,
    pub trunk: Option<Network>,
    pub actor: Network,
    pub critic: Network,
    pub online: NetParams,
    pub target: NetParams,
    pub adam: AgentAdam,
}

impl AgentNets {
    pub fn new(config: &AgentConfig, input: StateInput, max_speed_kmh: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(max_speed_kmh > 0.0) {
            return Err(Error::config("max speed must be positive"));
        }
        let (trunk, features) = match input {
            StateInput::Image { height, width } => {
                let net = Network::new(
                    vec![vec![1, height, width]],
                    conv_trunk("trunk_", config.conv_features, config.conv_layers),
                )?;
                let f = net.output_shape()[0];
                (Some(net), f)
            }
            StateInput::Vector { dim } => (None, dim),
        };
        let gain = config.output_init_gain;
        let actor = Network::new(
            vec![vec![features], vec![SCALARS]],
            vec![
                LayerSpec::concat("actor_scalars", 1),
                LayerSpec::dense("actor_fc", config.hidden),
                LayerSpec::relu("actor_relu"),
                LayerSpec::dense("actor_out", ACTION_DIM).with_gain(gain),
                LayerSpec::per_feature("actor_bound", vec![Activation::Tanh, Activation::Sigmoid]),
            ],
        )?;
        let critic = Network::new(
            vec![vec![features], vec![SCALARS], vec![ACTION_DIM]],
            vec![
                LayerSpec::concat("critic_scalars", 1),
                LayerSpec::concat("critic_action", 2),
                LayerSpec::dense("critic_fc", config.hidden),
                LayerSpec::relu("critic_relu"),
                LayerSpec::dense("critic_out", 1).with_gain(gain),
            ],
        )?;
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let trunk_seed = seeds.next_u64();
        let online = NetParams {
            trunk: trunk.as_ref().map(|t| t.init(trunk_seed)),
            actor: actor.init(seeds.next_u64()),
            critic: critic.init(seeds.next_u64()),
        };
        let adam = AgentAdam {
            trunk: online.trunk.as_ref().map(|p| AdamState::new(p, config.critic_lr)),
            actor: AdamState::new(&online.actor, config.actor_lr),
            critic: AdamState::new(&online.critic, config.critic_lr),
        };
        Ok(Self {
            config: config.clone(),
            input,
            max_speed_kmh,
            trunk,
            actor,
            critic,
            target: online.clone(),
            online,
            adam,
        })
    }

    fn features(&self, params: &NetParams, input: &Tensor) -> Result<Tensor> {
        match (&self.trunk, &params.trunk) {
            (Some(net), Some(p)) => net.predict(p, &[input]),
            (None, None) => Ok(input.clone()),
            _ => Err(Error::contract("trunk parameters do not match the network layout")),
        }
    }

    /// `y = r + γ(1 − d)·Q'(s', π'(s'))` using the target networks.
    pub fn compute_critic_targets(&self, batch: &TransitionBatch) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let next = &batch.next_states;
        let features = self.features(&self.target, &next.input)?;
        let a = self.actor.predict(&self.target.actor, &[&features, &next.scalars])?;
        let q = self.critic.predict(&self.target.critic, &[&features, &next.scalars, &a])?;
        let gamma = self.config.gamma;
        let targets: Vec<f64> = batch
            .rewards
            .iter()
            .zip(&batch.dones)
            .zip(q.data())
            .map(|((&r, &d), &q)| if d { r } else { r + gamma * q as f64 })
            .collect();
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NumericFault { layer: "critic_out".into() });
        }
        Ok(targets)
    }

    /// One clipped Adam step on the mean squared TD error, updating trunk and critic.
    pub fn critic_update(&mut self, batch: &TransitionBatch) -> Result<CriticStep> {
        let targets = self.compute_critic_targets(batch)?;
        let n = batch.len();
        let states = &batch.states;
        let (features, trunk_tape) = match (&self.trunk, &self.online.trunk) {
            (Some(net), Some(p)) => {
                let (f, tape) = net.forward(p, &[&states.input])?;
                (f, Some(tape))
            }
            _ => (states.input.clone(), None),
        };
        let (q, tape) = self.critic.forward(&self.online.critic, &[&features, &states.scalars, &batch.actions])?;
        let td: Vec<f64> = q.data().iter().zip(&targets).map(|(&q, &y)| q as f64 - y).collect();
        let loss = td.iter().map(|d| d * d).sum::<f64>() / n as f64;
        let dq: Vec<f32> = td.iter().map(|d| (2.0 * d / n as f64) as f32).collect();
        let dq = Tensor::from_vec(&[n, 1], dq)?;
        let critic_grads = self.critic.backward(&self.online.critic, &tape, &dq)?;
        let mut cg = critic_grads.params;
        match (&self.trunk, &mut self.online.trunk, trunk_tape) {
            (Some(net), Some(p), Some(tape)) => {
                let mut tg = net.backward_params(p, &tape, &critic_grads.inputs[0])?.params;
                clip_global_norm(&mut [&mut cg, &mut tg], self.config.grad_clip)?;
                adam_step(p, &tg, self.adam.trunk.as_mut().expect("trunk optimizer"))?;
            }
            _ => {
                clip_global_norm(&mut [&mut cg], self.config.grad_clip)?;
            }
        }
        adam_step(&mut self.online.critic, &cg, &mut self.adam.critic)?;
        Ok(CriticStep { td_errors: td.iter().map(|d| d.abs()).collect(), loss, features })
    }

    /// One clipped Adam ascent step on mean `Q(s, π(s))`. `features` are trunk
    /// outputs for the batch states; the trunk itself is not modified.
    pub fn actor_update(&mut self, features: &Tensor, scalars: &Tensor) -> Result<()> {
        let (a, tape) = self.actor.forward(&self.online.actor, &[features, scalars])?;
        let (_, critic_tape) = self.critic.forward(&self.online.critic, &[features, scalars, &a])?;
        let dq = Tensor::full(&[a.batch(), 1], 1.0 / a.batch() as f32);
        let grad = self.critic.backward(&self.online.critic, &critic_tape, &dq)?.inputs.swap_remove(2);
        self.ascend_actor(&tape, grad)
    }

    /// Actor ascent step with `∂(mean Q)/∂a` supplied by `dq_da`.
    pub fn actor_update_with(
        &mut self,
        features: &Tensor,
        scalars: &Tensor,
        dq_da: impl FnOnce(&Tensor) -> Result<Tensor>,
    ) -> Result<()> {
        let (a, tape) = self.actor.forward(&self.online.actor, &[features, scalars])?;
        let grad = dq_da(&a)?;
        if grad.shape() != a.shape() {
            return Err(Error::contract("action gradient shape differs from action batch"));
        }
        self.ascend_actor(&tape, grad)
    }

    fn ascend_actor(&mut self, tape: &Tape<f32>, mut grad: Tensor) -> Result<()> {
        // Descend on −Q.
        grad.data_mut().iter_mut().for_each(|g| *g = -*g);
        let mut ag = self.actor.backward(&self.online.actor, tape, &grad)?.params;
        clip_global_norm(&mut [&mut ag], self.config.grad_clip)?;
        adam_step(&mut self.online.actor, &ag, &mut self.adam.actor)
    }

    /// Moves every target network toward its online copy by `tau`.
    pub fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        if let (Some(t), Some(o)) = (&mut self.target.trunk, &self.online.trunk) {
            soft_update(t, o, tau)?;
        }
        soft_update(&mut self.target.actor, &self.online.actor, tau)?;
        soft_update(&mut self.target.critic, &self.online.critic, tau)
    }

    /// Full update on one batch: critic, actor on the pre-step features, targets.
    /// Returns the critic step for priority updates.
    pub fn train_step(&mut self, batch: &TransitionBatch) -> Result<CriticStep> {
        let step = self.critic_update(batch)?;
        self.actor_update(&step.features, &batch.states.scalars)?;
        self.soft_update_targets()?;
        if !self.online.is_finite() {
            return Err(Error::NumericFault { layer: "agent parameters".into() });
        }
        Ok(step)
    }

    /// Normalized actions `[B, 2]` for a batch of states.
    pub fn policy(&self, states: &StateBatch) -> Result<Tensor> {
        let features = self.features(&self.online, &states.input)?;
        self.actor.predict(&self.online.actor, &[&features, &states.scalars])
    }

    /// Critic estimate `Q(s, a)` for normalized actions.
    pub fn q_values(&self, states: &StateBatch, actions: &Tensor) -> Result<Vec<f64>> {
        let features = self.features(&self.online, &states.input)?;
        let q = self.critic.predict(&self.online.critic, &[&features, &states.scalars, actions])?;
        Ok(q.data().iter().map(|&v| v as f64).collect())
    }

    /// Deterministic policy action for a single state.
    pub fn act(&self, state: &StateBatch) -> Result<Action> {
        if state.input.batch() != 1 {
            return Err(Error::contract("act takes a single state"));
        }
        let a = self.policy(state)?;
        Ok(self.to_action(a.row(0)))
    }

    /// `act` plus decayed OU noise, clamped to the action box. The speed
    /// dimension's noise is scaled by `speed_scale_kmh`.
    pub fn act_noisy<R: Rng + ?Sized>(
        &self,
        state: &StateBatch,
        ou: &mut OuNoise,
        speed_scale_kmh: f64,
        rng: &mut R,
    ) -> Result<Action> {
        let base = self.act(state)?;
        Ok(perturb(base, &ou.next(rng), speed_scale_kmh, self.max_speed_kmh))
    }

    pub fn to_action(&self, normalized: &[f32]) -> Action {
        Action::new(normalized[0] as f64, normalized[1] as f64 * self.max_speed_kmh).clamped(self.max_speed_kmh)
    }

    /// Inverse of [`AgentNets::to_action`] for storing actions in a batch.
    pub fn normalize(&self, steering: f64, speed_kmh: f64) -> [f32; 2] {
        [steering as f32, (speed_kmh / self.max_speed_kmh) as f32]
    }

    pub fn save(&self, w: &mut Writer) {
        self.online.encode(w);
        self.target.encode(w);
        w.bool(self.adam.trunk.is_some());
        if let Some(a) = &self.adam.trunk {
            a.encode(w);
        }
        self.adam.actor.encode(w);
        self.adam.critic.encode(w);
    }

    /// Restores parameters and optimizer state into a freshly built agent.
    pub fn load(&mut self, r: &mut Reader<'_>) -> Result<()> {
        let online = NetParams::decode(r)?;
        let target = NetParams::decode(r)?;
        let trunk = if r.bool()? { Some(AdamState::decode(r)?) } else { None };
        let adam = AgentAdam { trunk, actor: AdamState::decode(r)?, critic: AdamState::decode(r)? };
        let same = |a: &NetParams, b: &NetParams| -> Result<()> {
            match (&a.trunk, &b.trunk) {
                (Some(x), Some(y)) => x.check_layout(y)?,
                (None, None) => {}
                _ => return Err(Error::codec("trunk presence differs from the agent layout")),
            }
            a.actor.check_layout(&b.actor)?;
            a.critic.check_layout(&b.critic)
        };
        same(&online, &self.online)?;
        same(&target, &self.online)?;
        self.online = online;
        self.target = target;
        self.adam = adam;
        Ok(())
    }
}

/// Adds `noise` (steering, speed-unit) to `base` and clamps to the action box.
pub fn perturb(base: Action, noise: &[f64], speed_scale_kmh: f64, max_speed_kmh: f64) -> Action {
    Action::new(base.steering + noise[0], base.speed_kmh + noise[1] * speed_scale_kmh).clamped(max_speed_kmh)
}
