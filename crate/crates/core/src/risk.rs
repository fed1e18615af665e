//! Value-at-risk, conditional value-at-risk and the mean-CVaR functional
//! `rho = (E[C] + lambda CVaR_alpha[C]) / (1 + lambda)` over weighted loss
//! batches, and the distorted occupancy measure that realizes `rho` as an
//! ordinary expectation on tabular MDPs.
//!
//! Monte-Carlo batches use uniform weights; exact trajectory distributions
//! pass their probabilities as weights and go through the same code.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{enumerate_trajectories, Environment, TabularMdp};
use crate::error::Result;
use crate::policy::Policy;

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("lambda must be a finite non-negative number, got {0}")]
    InvalidLambda(f64),
    #[error("gamma must lie in [0, 1), got {0}")]
    InvalidGamma(f64),
    #[error("loss batch is empty")]
    Empty,
    #[error("non-finite loss at index {0}")]
    NonFinite(usize),
    #[error("weights must be a probability vector matching the losses: {0}")]
    BadWeights(String),
}

/// `(alpha, lambda, gamma)` parameterizing every risk functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl RiskConfig {
    pub fn new(alpha: f64, lambda: f64, gamma: f64) -> Result<Self, RiskError> {
        check_alpha(alpha)?;
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(RiskError::InvalidLambda(lambda));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(RiskError::InvalidGamma(gamma));
        }
        Ok(Self { alpha, lambda, gamma })
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }
}

fn check_alpha(alpha: f64) -> Result<(), RiskError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(RiskError::InvalidAlpha(alpha))
    }
}

/// Per-trajectory losses with an optional probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    losses: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl LossBatch {
    pub fn uniform(losses: Vec<f64>) -> Result<Self, RiskError> {
        if losses.is_empty() {
            return Err(RiskError::Empty);
        }
        if let Some(i) = losses.iter().position(|x| !x.is_finite()) {
            return Err(RiskError::NonFinite(i));
        }
        Ok(Self { losses, weights: None })
    }

    pub fn weighted(losses: Vec<f64>, weights: Vec<f64>) -> Result<Self, RiskError> {
        let mut batch = Self::uniform(losses)?;
        if weights.len() != batch.losses.len() {
            return Err(RiskError::BadWeights(format!("{} weights for {} losses", weights.len(), batch.losses.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(RiskError::BadWeights("negative or non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(RiskError::BadWeights(format!("weights sum to {total}")));
        }
        batch.weights = Some(weights);
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.losses.len() as f64,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    pub fn mean(&self) -> f64 {
        match &self.weights {
            Some(w) => self.losses.iter().zip(w).map(|(c, w)| c * w).sum(),
            None => self.losses.iter().sum::<f64>() / self.losses.len() as f64,
        }
    }

    fn ascending_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.losses[a].total_cmp(&self.losses[b]).then(a.cmp(&b)));
        order
    }
}

/// Left `(1 - alpha)`-quantile `inf { t : P(C <= t) >= 1 - alpha }`.
///
/// At `alpha = 1` the infimum is unbounded below; the smallest loss is
/// returned, which leaves the Rockafellar-Uryasev value at the mean.
pub fn var_alpha(batch: &LossBatch, alpha: f64) -> Result<f64, RiskError> {
    check_alpha(alpha)?;
    let target = 1.0 - alpha - WEIGHT_TOL;
    let mut cumulative = 0.0;
    let order = batch.ascending_order();
    for &i in &order {
        cumulative += batch.weight(i);
        if cumulative >= target {
            return Ok(batch.losses[i]);
        }
    }
    Ok(batch.losses[*order.last().expect("non-empty batch")])
}

/// `CVaR_alpha = nu + E[(C - nu)_+] / alpha` evaluated at `nu = VaR_alpha`.
pub fn cvar_alpha(batch: &LossBatch, alpha: f64) -> Result<f64, RiskError> {
    let nu = var_alpha(batch, alpha)?;
    let excess: f64 = (0..batch.len()).map(|i| batch.weight(i) * (batch.losses[i] - nu).max(0.0)).sum();
    Ok(nu + excess / alpha)
}

/// Maximizing density of the CVaR dual program: `zeta_i` in `[0, 1/alpha]`
/// with `sum_i w_i zeta_i = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskEnvelopeDensity {
    pub zeta: Vec<f64>,
    pub weights: Vec<f64>,
    pub alpha: f64,
}

impl RiskEnvelopeDensity {
    /// `alpha * zeta_i`, the share of atom `i` that lies in the upper tail.
    pub fn tail_fraction(&self, i: usize) -> f64 {
        self.alpha * self.zeta[i]
    }

    /// Distortion `xi = (1 + lambda zeta) / (1 + lambda)` of the mean-CVaR functional.
    pub fn xi(&self, lambda: f64) -> Vec<f64> {
        self.zeta.iter().map(|z| (1.0 + lambda * z) / (1.0 + lambda)).collect()
    }
}

/// Solves `sup_zeta sum_i w_i zeta_i C_i` over the risk envelope greedily:
/// the largest losses receive `zeta = 1/alpha` until weight `alpha` is used
/// up. Atoms tied at the boundary loss share the leftover mass in proportion
/// to their weights.
pub fn cvar_dual_oracle(batch: &LossBatch, alpha: f64) -> Result<(f64, RiskEnvelopeDensity), RiskError> {
    check_alpha(alpha)?;
    let order = batch.ascending_order();
    let mut fraction = vec![0.0; batch.len()];
    let mut remaining = alpha;
    let mut end = order.len();
    while end > 0 && remaining > 0.0 {
        let loss = batch.losses[order[end - 1]];
        let mut start = end - 1;
        while start > 0 && batch.losses[order[start - 1]] == loss {
            start -= 1;
        }
        let group = &order[start..end];
        let group_weight: f64 = group.iter().map(|&i| batch.weight(i)).sum();
        let share = if group_weight <= remaining { 1.0 } else { remaining / group_weight };
        for &i in group {
            fraction[i] = share;
        }
        remaining -= share * group_weight;
        end = start;
    }
    let weights = batch.weights();
    let zeta: Vec<f64> = fraction.iter().map(|q| q / alpha).collect();
    let value = (0..batch.len()).map(|i| weights[i] * zeta[i] * batch.losses[i]).sum();
    Ok((value, RiskEnvelopeDensity { zeta, weights, alpha }))
}

/// Normalized mean-CVaR `(E[C] + lambda CVaR_alpha[C]) / (1 + lambda)`.
pub fn rho_lambda(batch: &LossBatch, cfg: &RiskConfig) -> Result<f64, RiskError> {
    Ok(scaled_rho_lambda(batch, cfg)? / (1.0 + cfg.lambda))
}

/// `(1 + lambda) rho = E[C] + lambda CVaR_alpha[C]`.
pub fn scaled_rho_lambda(batch: &LossBatch, cfg: &RiskConfig) -> Result<f64, RiskError> {
    Ok(batch.mean() + cfg.lambda * cvar_alpha(batch, cfg.alpha)?)
}

/// Mean, VaR, CVaR and normalized `rho` of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub mean: f64,
    pub var_alpha: f64,
    pub cvar_alpha: f64,
    pub rho_lambda: f64,
}

pub fn summarize(batch: &LossBatch, cfg: &RiskConfig) -> Result<RiskSummary, RiskError> {
    let mean = batch.mean();
    let cvar = cvar_alpha(batch, cfg.alpha)?;
    Ok(RiskSummary {
        mean,
        var_alpha: var_alpha(batch, cfg.alpha)?,
        cvar_alpha: cvar,
        rho_lambda: (mean + cfg.lambda * cvar) / (1.0 + cfg.lambda),
    })
}

/// Occupancy measure of the distorted trajectory law `xi* p` on a tabular MDP.
#[derive(Debug, Clone)]
pub struct DistortedOccupancy {
    /// `d_xi(s, a)`.
    pub measure: Vec<Vec<f64>>,
    /// Distorted mass per `(s, a, cost atom)`.
    pub atom_measure: Vec<Vec<Vec<f64>>>,
    /// `xi*(tau)` per enumerated trajectory.
    pub xi: Vec<f64>,
    /// `p(tau)` per enumerated trajectory.
    pub probabilities: Vec<f64>,
}

impl DistortedOccupancy {
    pub fn total_mass(&self) -> f64 {
        self.measure.iter().flatten().sum()
    }

    /// `E_{d_xi}[c]`, summing realized cost atoms.
    pub fn expected_cost(&self, mdp: &TabularMdp) -> f64 {
        let mut total = 0.0;
        for (s, per_state) in self.atom_measure.iter().enumerate() {
            for (a, per_atom) in per_state.iter().enumerate() {
                for (atom, mass) in mdp.cost_atoms(s, a).iter().zip(per_atom) {
                    total += mass * atom.value;
                }
            }
        }
        total
    }
}

/// Builds `d_xi*` with `xi* = (1 + lambda zeta*) / (1 + lambda)` and `zeta*`
/// the CVaR dual density of the exact loss distribution.
pub fn distorted_occupancy<P: Policy + ?Sized>(mdp: &TabularMdp, policy: &P, cfg: &RiskConfig) -> Result<DistortedOccupancy> {
    let paths = enumerate_trajectories(mdp, policy)?;
    let probabilities: Vec<f64> = paths.iter().map(|p| p.probability).collect();
    let total: f64 = probabilities.iter().sum();
    // absorb enumeration round-off so the batch passes the simplex check
    let normalized: Vec<f64> = probabilities.iter().map(|p| p / total).collect();
    let batch = LossBatch::weighted(paths.iter().map(|p| p.trajectory.loss()).collect(), normalized.clone())?;
    let (_, density) = cvar_dual_oracle(&batch, cfg.alpha)?;
    let xi = density.xi(cfg.lambda);

    let gamma = mdp.spec().gamma;
    let (ns, na) = (mdp.state_count(), mdp.action_count());
    let mut measure = vec![vec![0.0; na]; ns];
    let mut atom_measure: Vec<Vec<Vec<f64>>> =
        (0..ns).map(|s| (0..na).map(|a| vec![0.0; mdp.cost_atoms(s, a).len()]).collect()).collect();
    for ((path, p), x) in paths.iter().zip(&normalized).zip(&xi) {
        let mut discount = 1.0;
        for (t, &a) in path.trajectory.actions.iter().enumerate() {
            let s = path.state_indices[t];
            let mass = p * x * discount;
            measure[s][a] += mass;
            atom_measure[s][a][path.cost_atoms[t]] += mass;
            discount *= gamma;
        }
    }
    Ok(DistortedOccupancy { measure, atom_measure, xi, probabilities: normalized })
}
