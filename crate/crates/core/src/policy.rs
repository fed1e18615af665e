//! Stochastic policies over a finite action set.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::nn::{Activation, Mlp, NnError, Trace};

/// Maps an observation to a distribution over actions.
///
/// Implementations that cannot evaluate an observation return a vector that
/// is not on the simplex; rollouts reject it with `EnvError::NotOnSimplex`.
pub trait Policy: Sync {
    fn action_probs(&self, obs: &[f64]) -> Vec<f64>;
}

impl<F> Policy for F
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn action_probs(&self, obs: &[f64]) -> Vec<f64> {
        self(obs)
    }
}

/// Neural categorical policy: an MLP with a softmax head, optionally
/// behind a fixed linear view `x = V obs` of the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPolicy {
    net: Mlp,
    view: Option<Vec<Vec<f64>>>,
}

impl CategoricalPolicy {
    pub fn new(net: Mlp) -> Result<Self, NnError> {
        if net.head() != Activation::Softmax {
            return Err(NnError::Invalid("policy network needs a softmax head".into()));
        }
        Ok(Self { net, view: None })
    }

    /// A policy that only sees `view * obs`. The view needs one row per network input.
    pub fn with_view(net: Mlp, view: Vec<Vec<f64>>) -> Result<Self, NnError> {
        if view.len() != net.input_dim() {
            return Err(NnError::Dimension { expected: net.input_dim(), got: view.len() });
        }
        Ok(Self { view: Some(view), ..Self::new(net)? })
    }

    pub fn view(&self) -> Option<&[Vec<f64>]> {
        self.view.as_deref()
    }

    fn input<'o>(&self, obs: &'o [f64]) -> Result<Cow<'o, [f64]>, NnError> {
        match &self.view {
            None => Ok(Cow::Borrowed(obs)),
            Some(rows) => rows
                .iter()
                .map(|row| {
                    if row.len() != obs.len() {
                        return Err(NnError::Dimension { expected: row.len(), got: obs.len() });
                    }
                    Ok(row.iter().zip(obs).map(|(v, x)| v * x).sum())
                })
                .collect::<Result<Vec<f64>, _>>()
                .map(Cow::Owned),
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self, NnError> {
        Ok(Self { net: self.net.with_params(params)?, view: self.view.clone() })
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn probs(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        self.net.forward(&self.input(obs)?)
    }

    pub fn trace(&self, obs: &[f64]) -> Result<Trace, NnError> {
        self.net.forward_trace(&self.input(obs)?)
    }

    pub fn log_prob(&self, obs: &[f64], action: usize) -> Result<f64, NnError> {
        Ok(self.probs(obs)?[action].ln())
    }

    /// Adds `scale * d log pi(action | obs) / d params` into `grad`.
    pub fn accumulate_log_prob_grad(&self, trace: &Trace, action: usize, scale: f64, grad: &mut [f64]) -> Result<(), NnError> {
        let probs = trace.output();
        let mut cotangent: Vec<f64> = probs.iter().map(|p| -p).collect();
        cotangent[action] += 1.0;
        self.net.accumulate_backward_logits(trace, &cotangent, scale, grad)
    }

    pub fn log_prob_grad(&self, obs: &[f64], action: usize) -> Result<Vec<f64>, NnError> {
        let trace = self.trace(obs)?;
        let mut grad = vec![0.0; self.param_count()];
        self.accumulate_log_prob_grad(&trace, action, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// `sum_t grad log pi(a_t | s_t)` over the live steps of a trajectory.
    pub fn trajectory_score(&self, traj: &Trajectory) -> Result<Vec<f64>, NnError> {
        let mut grad = vec![0.0; self.param_count()];
        for t in 0..traj.live_steps {
            let trace = self.trace(&traj.states[t])?;
            self.accumulate_log_prob_grad(&trace, traj.actions[t], 1.0, &mut grad)?;
        }
        Ok(grad)
    }

    /// `sum_t log pi(a_t | s_t)` over the live steps.
    pub fn trajectory_log_prob(&self, traj: &Trajectory) -> Result<f64, NnError> {
        (0..traj.live_steps).map(|t| self.log_prob(&traj.states[t], traj.actions[t])).sum()
    }
}

impl Policy for CategoricalPolicy {
    fn action_probs(&self, obs: &[f64]) -> Vec<f64> {
        self.probs(obs).unwrap_or_default()
    }
}

/// Lookup-table policy over one-hot encoded states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub table: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(table: Vec<Vec<f64>>) -> Self {
        Self { table }
    }

    /// Deterministic policy choosing `choices[s]` in state `s`.
    pub fn deterministic(choices: &[usize], action_count: usize) -> Self {
        let table = choices
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; action_count];
                row[a] = 1.0;
                row
            })
            .collect();
        Self { table }
    }

    pub fn uniform(state_count: usize, action_count: usize) -> Self {
        Self { table: vec![vec![1.0 / action_count as f64; action_count]; state_count] }
    }
}

impl Policy for TabularPolicy {
    fn action_probs(&self, obs: &[f64]) -> Vec<f64> {
        match obs.iter().position(|&x| x == 1.0) {
            Some(s) if s < self.table.len() => self.table[s].clone(),
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn log_prob_grad_matches_finite_differences() {
        let mut rng = seeded(11);
        let net = Mlp::with_hidden(3, &[5], 4, Activation::Softmax, &mut rng).unwrap();
        let policy = CategoricalPolicy::new(net).unwrap();
        let obs = [0.4, -1.2, 0.7];
        for action in 0..4 {
            let grad = policy.log_prob_grad(&obs, action).unwrap();
            for i in 0..policy.param_count() {
                let h = 1e-6;
                let mut plus = policy.params().to_vec();
                plus[i] += h;
                let mut minus = policy.params().to_vec();
                minus[i] -= h;
                let fd = (policy.with_params(plus).unwrap().log_prob(&obs, action).unwrap()
                    - policy.with_params(minus).unwrap().log_prob(&obs, action).unwrap())
                    / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-7, "param {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn requires_softmax_head() {
        let mut rng = seeded(0);
        let net = Mlp::with_hidden(2, &[], 2, Activation::Tanh, &mut rng).unwrap();
        assert!(CategoricalPolicy::new(net).is_err());
    }

    #[test]
    fn wrong_observation_length_is_off_simplex() {
        let mut rng = seeded(0);
        let policy = CategoricalPolicy::new(Mlp::with_hidden(2, &[], 2, Activation::Softmax, &mut rng).unwrap()).unwrap();
        assert!(policy.action_probs(&[1.0]).is_empty());
    }

    #[test]
    fn tabular_lookup() {
        let p = TabularPolicy::deterministic(&[1, 0], 2);
        assert_eq!(p.action_probs(&[0.0, 1.0]), vec![1.0, 0.0]);
        assert_eq!(p.action_probs(&[1.0, 0.0]), vec![0.0, 1.0]);
        assert!(p.action_probs(&[0.0, 0.0]).is_empty());
    }
}
