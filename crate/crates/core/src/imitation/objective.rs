//! Likelihood-ratio gradients of the policy objective
//! `-entropy_weight * H(pi) + E[F] + lambda * CVaR_alpha[F]`.

use crate::env::Trajectory;
use crate::error::Result;
use crate::policy::CategoricalPolicy;
use crate::risk::{var_alpha, LossBatch, RiskConfig};

/// `(1/(alpha N)) sum_i score_i (F_i - nu)_+` with `nu` the empirical VaR of `F`.
///
/// `scores[i]` is `sum_t grad log pi(a_t | s_t)` for trajectory `i`.
pub fn policy_gradient_cvar(losses: &[f64], scores: &[Vec<f64>], alpha: f64) -> Result<Vec<f64>> {
    let nu = var_alpha(&LossBatch::uniform(losses.to_vec())?, alpha)?;
    let n = losses.len() as f64;
    let mut grad = vec![0.0; scores.first().map_or(0, Vec::len)];
    let mut tail = 0;
    for (loss, score) in losses.iter().zip(scores) {
        let excess = (loss - nu).max(0.0);
        if excess > 0.0 {
            tail += 1;
            grad.iter_mut().zip(score).for_each(|(g, s)| *g += excess * s / (alpha * n));
        }
    }
    if tail == 0 {
        log::debug!("no loss strictly above the empirical VaR; CVaR policy gradient is zero");
    }
    Ok(grad)
}

/// `(1/N) sum_i score_i (F_i - b)` with `b` the batch mean when `baseline` is set.
pub fn policy_gradient_mean(losses: &[f64], scores: &[Vec<f64>], baseline: bool) -> Vec<f64> {
    let n = losses.len() as f64;
    let b = if baseline { losses.iter().sum::<f64>() / n } else { 0.0 };
    let mut grad = vec![0.0; scores.first().map_or(0, Vec::len)];
    for (loss, score) in losses.iter().zip(scores) {
        grad.iter_mut().zip(score).for_each(|(g, s)| *g += (loss - b) * s / n);
    }
    grad
}

/// Per-step log-probabilities over the live steps of each trajectory.
pub fn step_log_probs(policy: &CategoricalPolicy, trajs: &[Trajectory]) -> Result<Vec<Vec<f64>>> {
    trajs
        .iter()
        .map(|traj| (0..traj.live_steps).map(|t| Ok(policy.log_prob(&traj.states[t], traj.actions[t])?)).collect())
        .collect()
}

/// `Q_t = sum_{k >= t} gamma^(k-t) (-log pi(a_k | s_k))` for one trajectory.
pub fn log_q_values(log_probs: &[f64], gamma: f64) -> Vec<f64> {
    let mut q = vec![0.0; log_probs.len()];
    let mut acc = 0.0;
    for t in (0..log_probs.len()).rev() {
        acc = -log_probs[t] + gamma * acc;
        q[t] = acc;
    }
    q
}

/// Monte-Carlo causal entropy `E[sum_t gamma^t (-log pi(a_t | s_t))]`.
pub fn causal_entropy(log_probs: &[Vec<f64>], trajs: &[Trajectory]) -> f64 {
    let total: f64 = log_probs
        .iter()
        .zip(trajs)
        .map(|(lp, traj)| log_q_values(lp, traj.gamma).first().copied().unwrap_or(0.0))
        .sum();
    total / trajs.len() as f64
}

/// Coefficients `c[i][t]` such that the objective gradient is
/// `(1/N) sum_i sum_t c[i][t] grad log pi(a_t | s_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCoefficients {
    pub per_step: Vec<Vec<f64>>,
}

impl StepCoefficients {
    /// Every live step of trajectory `i` carries `weights[i]`.
    pub fn from_trajectory_weights(weights: &[f64], trajs: &[Trajectory]) -> Self {
        Self { per_step: weights.iter().zip(trajs).map(|(w, tr)| vec![*w; tr.live_steps]).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.per_step.iter().flatten().all(|&c| c == 0.0)
    }
}

/// Score-function weights `(F_i - b) + (lambda/alpha)(F_i - nu)_+` of the risk part.
pub fn risk_weights(losses: &[f64], cfg: &RiskConfig, baseline: bool) -> Result<Vec<f64>> {
    let nu = var_alpha(&LossBatch::uniform(losses.to_vec())?, cfg.alpha)?;
    let n = losses.len() as f64;
    let b = if baseline { losses.iter().sum::<f64>() / n } else { 0.0 };
    Ok(losses.iter().map(|f| (f - b) + cfg.lambda / cfg.alpha * (f - nu).max(0.0)).collect())
}

/// Step coefficients for the full objective, entropy term included.
pub fn objective_coefficients(
    losses: &[f64],
    log_probs: &[Vec<f64>],
    trajs: &[Trajectory],
    cfg: &RiskConfig,
    baseline: bool,
    entropy_weight: f64,
) -> Result<StepCoefficients> {
    let weights = risk_weights(losses, cfg, baseline)?;
    let per_step = weights
        .iter()
        .zip(log_probs)
        .zip(trajs)
        .map(|((w, lp), traj)| {
            let q = log_q_values(lp, traj.gamma);
            let mut discount = 1.0;
            q.iter()
                .map(|qt| {
                    let c = w - entropy_weight * discount * qt;
                    discount *= traj.gamma;
                    c
                })
                .collect()
        })
        .collect();
    Ok(StepCoefficients { per_step })
}

/// `(1/N) sum_i sum_t c[i][t] grad log pi(a_t | s_t)`.
pub fn gradient_from_coefficients(policy: &CategoricalPolicy, trajs: &[Trajectory], coeffs: &StepCoefficients) -> Result<Vec<f64>> {
    let n = trajs.len() as f64;
    let mut grad = vec![0.0; policy.param_count()];
    for (traj, row) in trajs.iter().zip(&coeffs.per_step) {
        for (t, &c) in row.iter().enumerate() {
            if c != 0.0 {
                let trace = policy.trace(&traj.states[t])?;
                policy.accumulate_log_prob_grad(&trace, traj.actions[t], c / n, &mut grad)?;
            }
        }
    }
    Ok(grad)
}

/// Estimator `(1/N) sum_i sum_t gamma^t grad log pi(a_t | s_t) Q_t` of the
/// causal entropy gradient.
pub fn entropy_gradient(policy: &CategoricalPolicy, trajs: &[Trajectory]) -> Result<Vec<f64>> {
    let log_probs = step_log_probs(policy, trajs)?;
    let per_step = log_probs
        .iter()
        .zip(trajs)
        .map(|(lp, traj)| {
            let mut discount = 1.0;
            log_q_values(lp, traj.gamma)
                .into_iter()
                .map(|q| {
                    let c = discount * q;
                    discount *= traj.gamma;
                    c
                })
                .collect()
        })
        .collect();
    gradient_from_coefficients(policy, trajs, &StepCoefficients { per_step })
}
