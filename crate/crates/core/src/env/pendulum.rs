//! Pendulum swing-up with five discrete torques and multiplicative torque noise.
//!
//! State is `(cos theta, sin theta, theta_dot)`. With probability 0.2 the
//! selected torque `u` is multiplied by `1 + |Z|`, `Z` a standard normal
//! truncated to `[-3, 3]`. The noisy torque is applied unclipped and enters the
//! cost.

use rand::Rng as _;

use super::{check_state, truncated_normal, EnvError, EnvSpec, Environment, Step};
use crate::rng::Rng;

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const NOISE_TRUNCATION: f64 = 3.0;

pub const PENDULUM_TORQUES: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    noise_probability: f64,
}

impl Pendulum {
    pub fn new(horizon: usize, gamma: f64) -> Result<Self, EnvError> {
        Ok(Self { spec: EnvSpec::new("pendulum", 3, PENDULUM_TORQUES.len(), horizon, gamma)?, noise_probability: 0.2 })
    }

    pub fn noiseless(horizon: usize, gamma: f64) -> Result<Self, EnvError> {
        Ok(Self { noise_probability: 0.0, ..Self::new(horizon, gamma)? })
    }

    /// Effective torque for `action` after the random multiplier.
    pub fn torque(&self, action: usize, rng: &mut Rng) -> Result<f64, EnvError> {
        let u = *PENDULUM_TORQUES
            .get(action)
            .ok_or(EnvError::InvalidAction { action, count: PENDULUM_TORQUES.len() })?;
        let noisy = rng.random::<f64>() < self.noise_probability;
        let multiplier = if noisy { 1.0 + truncated_normal(rng, NOISE_TRUNCATION).abs() } else { 1.0 };
        Ok(u * multiplier)
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn angle_normalize(theta: f64) -> f64 {
    use std::f64::consts::PI;
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// One pendulum step under torque `u`; returns the next state and the cost.
pub fn pendulum_dynamics(state: &[f64], u: f64) -> ([f64; 3], f64) {
    let theta = state[1].atan2(state[0]);
    let theta_dot = state[2];
    let cost = angle_normalize(theta).powi(2) + 0.1 * theta_dot * theta_dot + 0.001 * u * u;
    let new_theta_dot = (theta_dot
        + (3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u) * DT)
        .clamp(-MAX_SPEED, MAX_SPEED);
    let new_theta = theta + new_theta_dot * DT;
    ([new_theta.cos(), new_theta.sin(), new_theta_dot], cost)
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        let theta: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let theta_dot: f64 = rng.random_range(-1.0..1.0);
        vec![theta.cos(), theta.sin(), theta_dot]
    }

    fn step(&self, state: &[f64], action: usize, rng: &mut Rng) -> Result<Step, EnvError> {
        check_state(state, 3)?;
        let u = self.torque(action, rng)?;
        let (next, cost) = pendulum_dynamics(state, u);
        Ok(Step { next_state: next.to_vec(), cost, done: false })
    }
}
