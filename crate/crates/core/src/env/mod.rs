//! Procedurally generated lane-following environment.
//!
//! One policy step (10 Hz by default) runs several controller/kinematics
//! substeps (100 Hz). Reward is the distance driven during the step.

pub mod render;
pub mod road;
pub mod vehicle;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use render::{Frame, Renderer};
pub use road::{generate_road, MarkingStyle, Projection, RoadSpec};
pub use vehicle::VehicleState;

pub const KMH: f64 = 1.0 / 3.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadConfig {
    pub route_length: f64,
    pub lane_half_width: f64,
    /// Smallest allowed radius of curvature; must be at least 6 m.
    pub min_radius: f64,
    /// Straight section at the start of every road.
    pub lead_in: f64,
    /// Road generated past the route end so the camera never runs out of road.
    pub lookahead: f64,
    /// Centerline vertex spacing.
    pub spacing: f64,
    /// Length range of constant-curvature pieces.
    pub piece_length: [f64; 2],
    pub ramp_length: f64,
    pub straight_probability: f64,
    pub max_heading_deg: f64,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            route_length: 250.0,
            lane_half_width: 1.5,
            min_radius: 20.0,
            lead_in: 10.0,
            lookahead: 40.0,
            spacing: 0.5,
            piece_length: [10.0, 35.0],
            ramp_length: 5.0,
            straight_probability: 0.25,
            max_heading_deg: 60.0,
        }
    }
}

impl RoadConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.route_length > 0.0, "route_length must be positive"),
            (self.lane_half_width > 0.0, "lane_half_width must be positive"),
            (self.min_radius >= 6.0, "min_radius must be at least 6 m"),
            (self.spacing > 0.0 && self.spacing <= 2.0, "spacing must be in (0, 2] m"),
            (self.lead_in >= 0.0 && self.lookahead >= 0.0, "lead_in and lookahead must be non-negative"),
            (
                self.piece_length[0] > 0.0 && self.piece_length[0] <= self.piece_length[1],
                "piece_length must be an increasing positive range",
            ),
            (self.ramp_length > 0.0, "ramp_length must be positive"),
            ((0.0..=1.0).contains(&self.straight_probability), "straight_probability must be in [0, 1]"),
            (self.max_heading_deg > 0.0 && self.max_heading_deg < 80.0, "max_heading_deg must be in (0, 80)"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::config(format!("[env.road] {msg}"))),
            None => Ok(()),
        }
    }

    /// Half-width of the indexed band around the centerline.
    pub fn band(&self) -> f64 {
        self.lane_half_width + 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleConfig {
    pub wheelbase: f64,
    pub max_steer_deg: f64,
    pub steer_rate_deg: f64,
    /// Proportional gain of the speed controller, 1/s.
    pub speed_gain: f64,
    pub max_accel: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self { wheelbase: 1.7, max_steer_deg: 30.0, steer_rate_deg: 90.0, speed_gain: 1.0, max_accel: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub supersample: usize,
    pub height_m: f64,
    pub forward_m: f64,
    pub pitch_deg: f64,
    pub hfov_deg: f64,
    pub far_m: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            supersample: 2,
            height_m: 1.4,
            forward_m: 1.2,
            pitch_deg: 20.0,
            hfov_deg: 90.0,
            far_m: 40.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub road: RoadConfig,
    pub vehicle: VehicleConfig,
    pub camera: CameraConfig,
    pub policy_hz: u32,
    pub control_hz: u32,
    /// Upper end of the speed set-point range, km/h.
    pub max_speed_kmh: f64,
    /// Exceeding this speed ends the episode; `None` disables the check.
    pub speed_limit_kmh: Option<f64>,
    /// Allowed fractional overshoot of the speed controller.
    pub overshoot_tolerance: f64,
    /// Policy steps before an episode is cut off (stalled vehicle).
    pub max_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            road: RoadConfig::default(),
            vehicle: VehicleConfig::default(),
            camera: CameraConfig::default(),
            policy_hz: 10,
            control_hz: 100,
            max_speed_kmh: 10.0,
            speed_limit_kmh: Some(10.0),
            overshoot_tolerance: 0.05,
            max_steps: 3000,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.road.validate()?;
        let v = &self.vehicle;
        if !(v.wheelbase > 0.0 && v.max_steer_deg > 0.0 && v.max_steer_deg < 89.0) {
            return Err(Error::config("[env.vehicle] wheelbase and max_steer_deg must be positive (max_steer_deg < 89)"));
        }
        if !(v.steer_rate_deg > 0.0 && v.speed_gain > 0.0 && v.max_accel > 0.0) {
            return Err(Error::config("[env.vehicle] steer_rate_deg, speed_gain and max_accel must be positive"));
        }
        if self.policy_hz == 0 || self.control_hz == 0 || self.control_hz % self.policy_hz != 0 {
            return Err(Error::config("[env] control_hz must be a positive multiple of policy_hz"));
        }
        if !(self.max_speed_kmh > 0.0) {
            return Err(Error::config("[env] max_speed_kmh must be positive"));
        }
        let c = &self.camera;
        if c.width == 0 || c.height == 0 || c.supersample == 0 || !(c.height_m > 0.0 && c.far_m > 0.0) {
            return Err(Error::config("[env.camera] image size, supersample, height_m and far_m must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("[env] max_steps must be positive"));
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.control_hz / self.policy_hz) as usize
    }

    pub fn policy_dt(&self) -> f64 {
        1.0 / self.policy_hz as f64
    }
}

/// Steering in `[-1, 1]` (positive left) and speed set-point in km/h.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub steering: f64,
    pub speed_kmh: f64,
}

impl Action {
    pub fn new(steering: f64, speed_kmh: f64) -> Self {
        Self { steering, speed_kmh }
    }

    /// Clamps into the action box; non-finite components become zero.
    pub fn clamped(self, max_speed_kmh: f64) -> Self {
        let fix = |v: f64| if v.is_finite() { v } else { 0.0 };
        Self {
            steering: fix(self.steering).clamp(-1.0, 1.0),
            speed_kmh: fix(self.speed_kmh).clamp(0.0, max_speed_kmh),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub image: Arc<Frame>,
    /// m/s
    pub speed: f64,
    /// Wheel angle normalized to `[-1, 1]`.
    pub steering: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    None,
    LaneDeparture,
    SpeedInfraction,
    RouteComplete,
    Intervention,
    /// Step budget exhausted without another termination (stalled vehicle).
    Timeout,
}

impl DoneReason {
    /// Whether the transition into this state is terminal for bootstrapping.
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::LaneDeparture | Self::SpeedInfraction | Self::RouteComplete | Self::Intervention)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub done_reason: DoneReason,
    pub lane_offset: f64,
    pub distance_along: f64,
}

pub struct Env {
    cfg: EnvConfig,
    renderer: Renderer,
    road: Option<Arc<RoadSpec>>,
    vehicle: VehicleState,
    steps: usize,
    distance: f64,
    lane_offset: f64,
    progress: f64,
    done: DoneReason,
    finished: bool,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let renderer = Renderer::new(&cfg.camera);
        Ok(Self {
            cfg,
            renderer,
            road: None,
            vehicle: VehicleState::at([0.0, 0.0], 0.0),
            steps: 0,
            distance: 0.0,
            lane_offset: 0.0,
            progress: 0.0,
            done: DoneReason::None,
            finished: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn road(&self) -> Option<&Arc<RoadSpec>> {
        self.road.as_ref()
    }

    pub fn vehicle(&self) -> &VehicleState {
        &self.vehicle
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Distance driven since reset (equals the sum of rewards).
    pub fn distance_along(&self) -> f64 {
        self.distance
    }

    /// Arc length of the vehicle's projection onto the centerline.
    pub fn progress(&self) -> f64 {
        self.progress
    }

    pub fn lane_offset(&self) -> f64 {
        self.lane_offset
    }

    pub fn is_done(&self) -> bool {
        self.finished
    }

    pub fn done_reason(&self) -> DoneReason {
        self.done
    }

    /// Places the vehicle at the start of `road`, centred and aligned, at rest.
    pub fn reset(&mut self, road: Arc<RoadSpec>) -> Observation {
        let (start, heading) = road.start_pose();
        self.road = Some(road);
        self.reset_to(VehicleState::at(start, heading))
    }

    /// Starts an episode from an arbitrary vehicle state on the current road.
    pub fn reset_to(&mut self, state: VehicleState) -> Observation {
        self.vehicle = state;
        self.steps = 0;
        self.distance = 0.0;
        self.done = DoneReason::None;
        self.finished = false;
        let proj = self.road_ref().project(state.position);
        self.lane_offset = proj.offset;
        self.progress = proj.s;
        self.observe()
    }

    fn road_ref(&self) -> &RoadSpec {
        self.road.as_deref().expect("environment has no road; call reset first")
    }

    pub fn observe(&self) -> Observation {
        let image = Arc::new(self.renderer.render(self.road_ref(), &self.vehicle));
        Observation {
            image,
            speed: self.vehicle.speed,
            steering: self.vehicle.steering_angle / self.cfg.vehicle.max_steer_deg.to_radians(),
        }
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.road.is_none() {
            return Err(Error::contract("step before reset"));
        }
        if self.finished {
            return Err(Error::contract("step after episode end"));
        }
        let action = action.clamped(self.cfg.max_speed_kmh);
        let target = action.steering * self.cfg.vehicle.max_steer_deg.to_radians();
        let setpoint = action.speed_kmh * KMH;
        let dt = 1.0 / self.cfg.control_hz as f64;
        let road = Arc::clone(self.road.as_ref().expect("checked above"));
        let mut reward = 0.0;
        for _ in 0..self.cfg.substeps() {
            let d = self.vehicle.substep(target, setpoint, dt, &self.cfg.vehicle);
            reward += d;
            let proj = road.project(self.vehicle.position);
            self.lane_offset = proj.offset;
            self.progress = proj.s;
            if proj.offset.abs() > road.lane_half_width {
                self.done = DoneReason::LaneDeparture;
            } else if self.cfg.speed_limit_kmh.is_some_and(|lim| self.vehicle.speed > lim * KMH) {
                self.done = DoneReason::SpeedInfraction;
            } else if proj.s >= road.route_length {
                self.done = DoneReason::RouteComplete;
            }
            if self.done != DoneReason::None {
                break;
            }
        }
        self.steps += 1;
        self.distance += reward;
        if self.done == DoneReason::None && self.steps >= self.cfg.max_steps {
            self.done = DoneReason::Timeout;
        }
        self.finished = self.done != DoneReason::None;
        Ok(StepResult {
            observation: self.observe(),
            reward,
            done: self.finished,
            done_reason: self.done,
            lane_offset: self.lane_offset,
            distance_along: self.distance,
        })
    }

    /// Ends the running episode on behalf of the safety driver.
    pub fn intervene(&mut self) -> Result<()> {
        if self.finished || self.road.is_none() {
            return Err(Error::contract("intervention outside a running episode"));
        }
        self.done = DoneReason::Intervention;
        self.finished = true;
        Ok(())
    }
}
