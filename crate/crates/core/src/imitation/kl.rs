//! Natural-gradient step under an empirical KL trust region.

use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::error::Result;
use crate::imitation::objective::StepCoefficients;
use crate::nn::Trace;
use crate::policy::CategoricalPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KlStepConfig {
    pub max_kl: f64,
    pub cg_iters: usize,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub damping: f64,
    /// Visited states kept (by even striding) for the Fisher and KL estimates.
    pub fisher_states: usize,
}

impl Default for KlStepConfig {
    fn default() -> Self {
        Self { max_kl: 0.01, cg_iters: 10, backtrack: 0.5, max_backtracks: 10, damping: 0.1, fisher_states: 1024 }
    }
}

/// Outcome of one trust-region step.
#[derive(Debug, Clone)]
pub struct KlStepOutcome {
    pub policy: CategoricalPolicy,
    /// Measured mean KL(old || new) of the returned policy.
    pub kl: f64,
    pub accepted: bool,
    pub backtracks: usize,
    /// Conjugate gradient failed and the plain gradient direction was used.
    pub fell_back: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` by conjugate gradient, starting from zero.
pub fn conjugate_gradient<F: Fn(&[f64]) -> Vec<f64>>(apply: F, b: &[f64], iters: usize) -> Vec<f64> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        if rr < 1e-20 {
            break;
        }
        let ap = apply(&p);
        let step = rr / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += step * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= step * ai);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
    }
    x
}

/// Full natural step `sqrt(2 max_kl / d'Fd) d` with `F d = g` solved by
/// conjugate gradient. `None` when the solve is not finite or `d'Fd <= 0`.
pub fn natural_step<F: Fn(&[f64]) -> Vec<f64>>(fisher: F, g: &[f64], max_kl: f64, cg_iters: usize) -> Option<Vec<f64>> {
    let d = conjugate_gradient(&fisher, g, cg_iters);
    let curvature = dot(&d, &fisher(&d));
    if !(curvature.is_finite() && curvature > 0.0) || d.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let beta = (2.0 * max_kl / curvature).sqrt();
    Some(d.into_iter().map(|x| beta * x).collect())
}

/// Evenly strided subsample of visited live states.
pub(crate) fn fisher_states(trajs: &[Trajectory], limit: usize) -> Vec<&[f64]> {
    let all: Vec<&[f64]> = trajs.iter().flat_map(|tr| tr.states[..tr.live_steps].iter().map(Vec::as_slice)).collect();
    if all.len() <= limit {
        return all;
    }
    let stride = all.len() as f64 / limit as f64;
    (0..limit).map(|i| all[(i as f64 * stride) as usize]).collect()
}

/// Damped Fisher-vector product `(1/M) sum_s J_s' (diag p - p p') J_s v + damping v`
/// of a categorical policy, `J_s` being the logit Jacobian at state `s`.
fn fisher_product(policy: &CategoricalPolicy, traces: &[Trace], damping: f64, v: &[f64]) -> Vec<f64> {
    let net = policy.net();
    let mut out = vec![0.0; v.len()];
    let m = traces.len() as f64;
    for trace in traces {
        let jv = net.jvp_logits(trace, v).expect("tangent has parameter length");
        let p = trace.output();
        let mean: f64 = p.iter().zip(&jv).map(|(pi, x)| pi * x).sum();
        let hv: Vec<f64> = p.iter().zip(&jv).map(|(pi, x)| pi * (x - mean)).collect();
        net.accumulate_backward_logits(trace, &hv, 1.0 / m, &mut out).expect("cotangent has output length");
    }
    out.iter_mut().zip(v).for_each(|(o, vi)| *o += damping * vi);
    out
}

/// Mean KL(old || new) over the given states.
pub fn mean_kl(old: &[Vec<f64>], new: &CategoricalPolicy, states: &[&[f64]]) -> Result<f64> {
    let mut total = 0.0;
    for (p, s) in old.iter().zip(states) {
        let q = new.probs(s)?;
        total += p.iter().zip(&q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / qi).ln()).sum::<f64>();
    }
    Ok(total / states.len() as f64)
}

/// Importance-weighted surrogate `(1/N) sum_i sum_t c[i][t] pi_new(a_t|s_t) / pi_old(a_t|s_t)`,
/// whose gradient at `pi_new = pi_old` is the objective gradient.
fn surrogate(policy: &CategoricalPolicy, trajs: &[Trajectory], coeffs: &StepCoefficients, old_log_probs: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for ((traj, row), old) in trajs.iter().zip(&coeffs.per_step).zip(old_log_probs) {
        for (t, &c) in row.iter().enumerate() {
            if c != 0.0 {
                total += c * (policy.log_prob(&traj.states[t], traj.actions[t])? - old[t]).exp();
            }
        }
    }
    Ok(total / trajs.len() as f64)
}

/// One descent step on the objective whose gradient is `gradient` and whose
/// per-step coefficients are `coeffs` (used for the line-search surrogate).
pub fn kl_constrained_step(
    policy: &CategoricalPolicy,
    gradient: &[f64],
    trajs: &[Trajectory],
    coeffs: &StepCoefficients,
    cfg: &KlStepConfig,
) -> Result<KlStepOutcome> {
    let unchanged = |fell_back| KlStepOutcome { policy: policy.clone(), kl: 0.0, accepted: false, backtracks: 0, fell_back };
    if gradient.iter().all(|&g| g == 0.0) {
        return Ok(unchanged(false));
    }
    let states = fisher_states(trajs, cfg.fisher_states.max(1));
    let traces: Vec<Trace> = states.iter().map(|s| policy.trace(s)).collect::<std::result::Result<_, _>>()?;
    let old_probs: Vec<Vec<f64>> = traces.iter().map(|t| t.output().to_vec()).collect();

    let mut fell_back = false;
    let step = match natural_step(|v| fisher_product(policy, &traces, cfg.damping, v), gradient, cfg.max_kl, cfg.cg_iters) {
        Some(step) => step,
        None => {
            log::warn!("conjugate gradient produced a non-finite direction; using the plain gradient");
            fell_back = true;
            let norm2 = dot(gradient, gradient);
            let beta = (2.0 * cfg.max_kl / norm2).sqrt();
            if !beta.is_finite() {
                return Ok(unchanged(true));
            }
            gradient.iter().map(|g| beta * g).collect()
        }
    };

    let old_log_probs: Vec<Vec<f64>> =
        trajs.iter().map(|tr| (0..tr.live_steps).map(|t| policy.log_prob(&tr.states[t], tr.actions[t])).collect()).collect::<std::result::Result<_, _>>()?;
    let base = surrogate(policy, trajs, coeffs, &old_log_probs)?;
    let mut fraction = 1.0;
    for backtracks in 0..=cfg.max_backtracks {
        let params: Vec<f64> = policy.params().iter().zip(&step).map(|(p, s)| p - fraction * s).collect();
        let candidate = policy.with_params(params)?;
        let kl = mean_kl(&old_probs, &candidate, &states)?;
        let value = surrogate(&candidate, trajs, coeffs, &old_log_probs)?;
        if kl.is_finite() && kl <= cfg.max_kl && value < base {
            return Ok(KlStepOutcome { policy: candidate, kl, accepted: true, backtracks, fell_back });
        }
        fraction *= cfg.backtrack;
    }
    log::debug!("line search exhausted {} backtracks; keeping the policy", cfg.max_backtracks);
    Ok(unchanged(fell_back))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_fisher_gives_closed_form_step() {
        let g = [0.3, -1.2, 0.5, 2.0];
        let max_kl = 0.01;
        let step = natural_step(|v| v.to_vec(), &g, max_kl, 10).unwrap();
        let norm2: f64 = g.iter().map(|x| x * x).sum();
        let beta = (2.0 * max_kl / norm2).sqrt();
        for (s, gi) in step.iter().zip(&g) {
            assert!((s - beta * gi).abs() < 1e-15);
        }
    }

    #[test]
    fn conjugate_gradient_solves_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let apply = |v: &[f64]| (0..3).map(|i| (0..3).map(|j| a[i][j] * v[j]).sum()).collect::<Vec<f64>>();
        let b = [1.0, 2.0, 3.0];
        let x = conjugate_gradient(apply, &b, 3);
        let ax = apply(&x);
        for (l, r) in ax.iter().zip(&b) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_fisher_is_rejected() {
        assert!(natural_step(|v| vec![0.0; v.len()], &[1.0, 0.0], 0.01, 5).is_none());
    }
}
