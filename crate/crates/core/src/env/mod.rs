//! Stochastic decision processes: noisy CartPole, noisy Pendulum and finite
//! tabular MDPs, plus fixed-horizon rollouts and trajectory datasets.
//!
//! All costs follow the loss-minimization convention. A trajectory always has
//! exactly `horizon` steps; episodes that terminate early are padded with the
//! terminal state and zero cost.

mod cartpole;
mod dataset;
mod pendulum;
mod tabular;

pub use cartpole::{cartpole_dynamics, CartPole, CARTPOLE_FORCE_MAG};
pub use dataset::{read_dataset, write_dataset, DatasetHeader, TrajectoryRecord, DATASET_FORMAT_VERSION};
pub use pendulum::{angle_normalize, pendulum_dynamics, Pendulum, PENDULUM_TORQUES};
pub use tabular::{
    enumerate_trajectories, forward_occupancy, one_hot, CostAtom, EnumeratedTrajectory, TabularMdp,
    ENUMERATION_LIMIT,
};

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::Policy;
use crate::rng::{substream, Rng};

/// Tolerance on the policy's action distribution summing to one.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("non-finite state {0:?}")]
    NonFiniteState(Vec<f64>),
    #[error("action {action} out of range for {count} actions")]
    InvalidAction { action: usize, count: usize },
    #[error("state has length {got}, expected {expected}")]
    StateDimension { got: usize, expected: usize },
    #[error("policy output is not a distribution over {count} actions: {probs:?}")]
    NotOnSimplex { probs: Vec<f64>, count: usize },
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error("enumeration of {size:.3e} trajectories exceeds the limit of {limit:.0e}")]
    EnumerationTooLarge { size: f64, limit: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub observation_dim: usize,
    pub action_count: usize,
    pub horizon: usize,
    pub gamma: f64,
}

impl EnvSpec {
    pub fn new(name: &str, observation_dim: usize, action_count: usize, horizon: usize, gamma: f64) -> Result<Self, EnvError> {
        if horizon == 0 {
            return Err(EnvError::Invalid("horizon must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(EnvError::Invalid(format!("gamma {gamma} outside [0, 1)")));
        }
        if observation_dim == 0 || action_count == 0 {
            return Err(EnvError::Invalid("empty observation or action space".into()));
        }
        Ok(Self { name: name.to_string(), observation_dim, action_count, horizon, gamma })
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub cost: f64,
    pub done: bool,
}

/// A stochastic environment. Stepping is a pure function of the state, the
/// action and the supplied random stream.
pub trait Environment: Sync {
    fn spec(&self) -> &EnvSpec;
    fn initial_state(&self, rng: &mut Rng) -> Vec<f64>;
    fn step(&self, state: &[f64], action: usize, rng: &mut Rng) -> Result<Step, EnvError>;
}

impl<E: Environment + ?Sized> Environment for &E {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }
    fn initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        (**self).initial_state(rng)
    }
    fn step(&self, state: &[f64], action: usize, rng: &mut Rng) -> Result<Step, EnvError> {
        (**self).step(state, action, rng)
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }
    fn initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        (**self).initial_state(rng)
    }
    fn step(&self, state: &[f64], action: usize, rng: &mut Rng) -> Result<Step, EnvError> {
        (**self).step(state, action, rng)
    }
}

/// A fixed-horizon trajectory `(s_0, a_0, c_0, ..., s_T)`.
///
/// `live_steps` counts the steps taken before termination; the remaining
/// steps are padding (terminal state repeated, action 0, cost 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub costs: Vec<f64>,
    pub gamma: f64,
    pub live_steps: usize,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Discounted loss `sum_t gamma^t c_t`.
    pub fn loss(&self) -> f64 {
        let mut discount = 1.0;
        let mut total = 0.0;
        for &c in &self.costs {
            total += discount * c;
            discount *= self.gamma;
        }
        total
    }

    /// Checks the length invariants.
    pub fn validate(&self) -> Result<(), EnvError> {
        let t = self.actions.len();
        if self.states.len() != t + 1 || self.costs.len() != t || self.live_steps > t {
            return Err(EnvError::Invalid(format!(
                "trajectory lengths inconsistent: {} states, {} actions, {} costs, {} live",
                self.states.len(),
                t,
                self.costs.len(),
                self.live_steps
            )));
        }
        if !self.loss().is_finite() {
            return Err(EnvError::Invalid("trajectory loss is not finite".into()));
        }
        Ok(())
    }
}

/// Validates a policy output and samples an action index from it.
pub fn sample_action(probs: &[f64], action_count: usize, rng: &mut Rng) -> Result<usize, EnvError> {
    check_simplex(probs, action_count)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(a);
        }
    }
    // u landed in the rounding gap above the cumulative sum: take the last supported action
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(action_count - 1))
}

pub(crate) fn check_simplex(probs: &[f64], action_count: usize) -> Result<(), EnvError> {
    let sum: f64 = probs.iter().sum();
    if probs.len() != action_count
        || probs.iter().any(|p| !p.is_finite() || *p < 0.0)
        || (sum - 1.0).abs() > SIMPLEX_TOL
    {
        return Err(EnvError::NotOnSimplex { probs: probs.to_vec(), count: action_count });
    }
    Ok(())
}

/// Samples one fixed-horizon trajectory with `a_t ~ policy(. | s_t)`.
pub fn rollout<E, P>(env: &E, policy: &P, rng: &mut Rng) -> Result<Trajectory, EnvError>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    let spec = env.spec();
    let horizon = spec.horizon;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut costs = Vec::with_capacity(horizon);
    let mut state = env.initial_state(rng);
    let mut live_steps = horizon;
    for t in 0..horizon {
        let probs = policy.action_probs(&state);
        let action = sample_action(&probs, spec.action_count, rng)?;
        let step = env.step(&state, action, rng)?;
        states.push(std::mem::replace(&mut state, step.next_state));
        actions.push(action);
        costs.push(step.cost);
        if step.done {
            live_steps = t + 1;
            for _ in t + 1..horizon {
                states.push(state.clone());
                actions.push(0);
                costs.push(0.0);
            }
            break;
        }
    }
    states.push(state);
    Ok(Trajectory { states, actions, costs, gamma: spec.gamma, live_steps })
}

/// Samples `count` trajectories; trajectory `i` uses substream `i` of
/// `master_seed`, so the output is independent of the rayon thread count.
pub fn rollout_batch<E, P>(env: &E, policy: &P, count: usize, master_seed: u64) -> Result<Vec<Trajectory>, EnvError>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    (0..count)
        .into_par_iter()
        .map(|i| rollout(env, policy, &mut substream(master_seed, i as u64)))
        .collect()
}

/// Standard normal truncated to `[-bound, bound]` by rejection.
pub fn truncated_normal(rng: &mut Rng, bound: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= bound {
            return z;
        }
    }
}

pub(crate) fn check_state(state: &[f64], expected: usize) -> Result<(), EnvError> {
    if state.len() != expected {
        return Err(EnvError::StateDimension { got: state.len(), expected });
    }
    if state.iter().any(|x| !x.is_finite()) {
        return Err(EnvError::NonFiniteState(state.to_vec()));
    }
    Ok(())
}
