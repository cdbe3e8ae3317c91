//! Kinematic bicycle model referenced at the rear axle.

use serde::{Deserialize, Serialize};

use crate::env::VehicleConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Rear-axle position, meters.
    pub position: [f64; 2],
    pub heading: f64,
    /// Forward speed, m/s (never negative).
    pub speed: f64,
    /// Front-wheel angle, radians (positive turns left).
    pub steering_angle: f64,
}

impl VehicleState {
    pub fn at(position: [f64; 2], heading: f64) -> Self {
        Self { position, heading, speed: 0.0, steering_angle: 0.0 }
    }

    /// Advances by `dt` toward the commanded wheel angle and speed set-point.
    /// Returns the distance driven.
    pub fn substep(&mut self, target_angle: f64, setpoint: f64, dt: f64, cfg: &VehicleConfig) -> f64 {
        let max_angle = cfg.max_steer_deg.to_radians();
        let max_delta = cfg.steer_rate_deg.to_radians() * dt;
        let target = target_angle.clamp(-max_angle, max_angle);
        self.steering_angle += (target - self.steering_angle).clamp(-max_delta, max_delta);
        self.steering_angle = self.steering_angle.clamp(-max_angle, max_angle);

        // Proportional set-point tracking with a clamped acceleration; the
        // distance is integrated exactly for the constant acceleration,
        // including a stop part-way through the substep.
        let accel = (cfg.speed_gain * (setpoint - self.speed)).clamp(-cfg.max_accel, cfg.max_accel);
        let v0 = self.speed;
        let v1 = v0 + accel * dt;
        let dist = if v1 >= 0.0 {
            self.speed = v1;
            0.5 * (v0 + v1) * dt
        } else {
            self.speed = 0.0;
            0.5 * v0 * v0 / -accel
        };

        // Exact arc of constant curvature.
        let kappa = self.steering_angle.tan() / cfg.wheelbase;
        let dtheta = kappa * dist;
        let [x, y] = self.position;
        let th = self.heading;
        if dtheta.abs() < 1e-12 {
            self.position = [x + dist * th.cos(), y + dist * th.sin()];
        } else {
            self.position = [
                x + ((th + dtheta).sin() - th.sin()) / kappa,
                y + (th.cos() - (th + dtheta).cos()) / kappa,
            ];
        }
        self.heading = th + dtheta;
        dist
    }
}
