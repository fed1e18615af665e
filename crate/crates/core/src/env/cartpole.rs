//! Cart-pole with a noisy left push.
//!
//! Action 1 pushes right with force `F`. Action 0 pushes left with `-F` with
//! probability 0.8 and otherwise with `-K F`, `K` uniform on `{0, ..., 8}`.
//! Each step taken from a live state costs -1.

use rand::Rng as _;

use super::{check_state, EnvError, EnvSpec, Environment, Step};
use crate::rng::Rng;

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = POLE_MASS * HALF_LENGTH;
pub const CARTPOLE_FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const X_THRESHOLD: f64 = 2.4;
const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
const MAX_K: u32 = 8;

#[derive(Debug, Clone)]
pub struct CartPole {
    spec: EnvSpec,
    noise_probability: f64,
}

impl CartPole {
    pub fn new(horizon: usize, gamma: f64) -> Result<Self, EnvError> {
        Ok(Self { spec: EnvSpec::new("cartpole", 4, 2, horizon, gamma)?, noise_probability: 0.2 })
    }

    /// Same dynamics without the action noise.
    pub fn noiseless(horizon: usize, gamma: f64) -> Result<Self, EnvError> {
        Ok(Self { noise_probability: 0.0, ..Self::new(horizon, gamma)? })
    }

    /// Signed force applied for `action`, drawing the left-push multiplier.
    pub fn force(&self, action: usize, rng: &mut Rng) -> Result<f64, EnvError> {
        match action {
            1 => Ok(CARTPOLE_FORCE_MAG),
            0 => {
                let multiplier = if self.noise_probability > 0.0 && rng.random::<f64>() < self.noise_probability {
                    f64::from(rng.random_range(0..=MAX_K))
                } else {
                    1.0
                };
                Ok(-multiplier * CARTPOLE_FORCE_MAG)
            }
            _ => Err(EnvError::InvalidAction { action, count: 2 }),
        }
    }

    pub fn is_terminal(state: &[f64]) -> bool {
        state[0].abs() > X_THRESHOLD || state[2].abs() > THETA_THRESHOLD
    }
}

/// One explicit Euler step of the classic cart-pole equations under `force`.
/// State layout is `(x, x_dot, theta, theta_dot)`.
pub fn cartpole_dynamics(state: &[f64], force: f64) -> [f64; 4] {
    let (x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
    let (sin, cos) = theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
    [x + TAU * x_dot, x_dot + TAU * x_acc, theta + TAU * theta_dot, theta_dot + TAU * theta_acc]
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        (0..4).map(|_| rng.random_range(-0.05..0.05)).collect()
    }

    fn step(&self, state: &[f64], action: usize, rng: &mut Rng) -> Result<Step, EnvError> {
        check_state(state, 4)?;
        let force = self.force(action, rng)?;
        let next = cartpole_dynamics(state, force);
        Ok(Step { next_state: next.to_vec(), cost: -1.0, done: Self::is_terminal(&next) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::rollout;
    use crate::rng::seeded;

    #[test]
    fn left_push_is_unperturbed_with_probability_point_eight() {
        let env = CartPole::new(10, 0.99).unwrap();
        let mut rng = seeded(11);
        let n = 200_000;
        let plain = (0..n).filter(|_| env.force(0, &mut rng).unwrap() == -CARTPOLE_FORCE_MAG).count();
        // plain force also arises from K = 1 in the noisy branch: 0.8 + 0.2 / 9
        let expected = 0.8 + 0.2 / 9.0;
        let p = plain as f64 / n as f64;
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((p - expected).abs() < 4.0 * se, "p = {p}");
    }

    #[test]
    fn right_push_is_deterministic() {
        let env = CartPole::new(10, 0.99).unwrap();
        let mut rng = seeded(0);
        for _ in 0..100 {
            assert_eq!(env.force(1, &mut rng).unwrap(), CARTPOLE_FORCE_MAG);
        }
    }

    #[test]
    fn unit_multiplier_matches_noiseless_push_bitwise() {
        let state = [0.01, -0.2, 0.03, 0.1];
        let k = 1u32;
        let noisy = cartpole_dynamics(&state, -f64::from(k) * CARTPOLE_FORCE_MAG);
        let plain = cartpole_dynamics(&state, -CARTPOLE_FORCE_MAG);
        assert_eq!(noisy.map(f64::to_bits), plain.map(f64::to_bits));
    }

    #[test]
    fn rejects_non_finite_state_and_bad_action() {
        let env = CartPole::new(10, 0.99).unwrap();
        let mut rng = seeded(0);
        assert!(matches!(env.step(&[f64::NAN, 0.0, 0.0, 0.0], 0, &mut rng), Err(EnvError::NonFiniteState(_))));
        assert!(env.step(&[0.0; 4], 2, &mut rng).is_err());
    }

    #[test]
    fn terminated_episode_is_zero_padded() {
        let env = CartPole::new(200, 0.99).unwrap();
        let always_left = |_: &[f64]| vec![1.0, 0.0];
        let traj = rollout(&env, &always_left, &mut seeded(5)).unwrap();
        assert!(traj.live_steps < 200);
        assert_eq!(traj.states.len(), 201);
        assert!(traj.costs[traj.live_steps..].iter().all(|&c| c == 0.0));
        assert!(traj.costs[..traj.live_steps].iter().all(|&c| c == -1.0));
        let last_live = &traj.states[traj.live_steps];
        assert!(traj.states[traj.live_steps..].iter().all(|s| s == last_live));
    }
}
