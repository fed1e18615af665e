//! Oracle and property suites, shared by the `verify` command and the
//! acceptance test.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng as _;

use crate::env::{enumerate_trajectories, rollout_batch, Environment, TabularMdp, Trajectory};
use crate::error::{Error, Result};
use crate::expert::generate_expert_dataset;
use crate::fixtures::{self, GridSpec};
use crate::imitation::{
    discriminator_gradient_js, discriminator_gradient_w, discriminator_objective, disc_input, entropy_gradient, policy_gradient_cvar,
    policy_gradient_mean, surrogate_losses, ExpertTerm, Head, ImitationAlgo, PolicyOptimizer, Trainer, Variant, F_CLAMP,
};
use crate::nn::{Activation, Mlp};
use crate::policy::{CategoricalPolicy, TabularPolicy};
use crate::risk::{cvar_alpha, cvar_dual_oracle, distorted_occupancy, rho_lambda, var_alpha, LossBatch, RiskConfig};
use crate::rng::{derive_seed, seeded, Rng};

/// Outcome of one suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn line(&self) -> String {
        format!("{} {}: {} ({:.2}s)", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail, self.seconds)
    }
}

fn timed<F: FnOnce() -> Result<(bool, String)>>(name: &'static str, run: F) -> Result<SuiteReport> {
    let start = Instant::now();
    let (passed, detail) = run()?;
    Ok(SuiteReport { name, passed, detail, seconds: start.elapsed().as_secs_f64() })
}

// ----- risk estimators -----

/// A random weighted batch and tail level.
#[derive(Debug, Clone)]
pub struct RandomBatch {
    pub batch: LossBatch,
    pub alpha: f64,
}

/// `count` batches with `N` in `1..=200`, `alpha` on the grid `0.05, 0.10, ..., 1`,
/// a mix of uniform and random weights, and frequent ties.
pub fn random_batches(count: usize, seed: u64) -> Vec<RandomBatch> {
    let mut rng = seeded(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(1..=200usize);
            let tied = rng.random_bool(0.3);
            let losses: Vec<f64> = (0..n)
                .map(|_| if tied { rng.random_range(-5..=5) as f64 } else { rng.random_range(-10.0..10.0) })
                .collect();
            let batch = if rng.random_bool(0.5) {
                LossBatch::uniform(losses)
            } else {
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
                let total: f64 = raw.iter().sum();
                LossBatch::weighted(losses, raw.iter().map(|w| w / total).collect())
            }
            .expect("valid random batch");
            let alpha = rng.random_range(1..=20usize) as f64 * 0.05;
            RandomBatch { batch, alpha }
        })
        .collect()
}

/// `min_nu nu + E[(L - nu)_+] / alpha`, evaluated at every loss value.
/// The objective is piecewise linear with kinks at the losses, so the
/// minimum over the grid is the exact minimum.
pub fn ru_grid_minimum(batch: &LossBatch, alpha: f64) -> f64 {
    let losses = batch.losses();
    losses
        .iter()
        .map(|&nu| nu + (0..losses.len()).map(|i| batch.weight(i) * (losses[i] - nu).max(0.0)).sum::<f64>() / alpha)
        .fold(f64::INFINITY, f64::min)
}

/// Optimum of `max sum_i w_i zeta_i L_i` over `0 <= zeta <= 1/alpha`,
/// `sum_i w_i zeta_i = 1`. The LP is a fractional knapsack, so filling
/// the largest losses first is optimal.
pub fn dual_lp_optimum(batch: &LossBatch, alpha: f64) -> f64 {
    let losses = batch.losses();
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]));
    let mut remaining = 1.0;
    let mut value = 0.0;
    for i in order {
        let take = (batch.weight(i) / alpha).min(remaining);
        value += take * losses[i];
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }
    value
}

/// Largest disagreement between `cvar_alpha`, the RU grid minimum, the dual
/// LP optimum and the value and feasibility of the dual density.
pub fn oracle_disagreement(batches: &[RandomBatch]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for RandomBatch { batch, alpha } in batches {
        let cvar = cvar_alpha(batch, *alpha)?;
        let (dual_value, density) = cvar_dual_oracle(batch, *alpha)?;
        let mass: f64 = density.weights.iter().zip(&density.zeta).map(|(w, z)| w * z).sum();
        let bound_violation = density.zeta.iter().map(|z| (-z).max(z - 1.0 / alpha).max(0.0)).fold(0.0, f64::max);
        let weighted: f64 = density.weights.iter().zip(&density.zeta).zip(batch.losses()).map(|((w, z), l)| w * z * l).sum();
        for gap in [
            cvar - ru_grid_minimum(batch, *alpha),
            cvar - dual_lp_optimum(batch, *alpha),
            cvar - dual_value,
            cvar - weighted,
            mass - 1.0,
            bound_violation,
        ] {
            worst = worst.max(gap.abs());
        }
    }
    Ok(worst)
}

/// Largest violation of each coherence property, in the order dominance,
/// monotonicity in alpha, translation, positive homogeneity.
pub fn coherence_violations(batches: &[RandomBatch], seed: u64) -> Result<[f64; 4]> {
    let mut rng = seeded(seed);
    let mut worst = [0.0f64; 4];
    for RandomBatch { batch, alpha } in batches {
        let losses = batch.losses();
        let weights = batch.weights();
        let rebuild = |l: Vec<f64>| LossBatch::weighted(l, weights.clone());
        let base = cvar_alpha(batch, *alpha)?;

        let bumped = rebuild(losses.iter().map(|l| l + rng.random_range(0.0..2.0)).collect())?;
        worst[0] = worst[0].max(base - cvar_alpha(&bumped, *alpha)?);

        let wider = rng.random_range((*alpha / 0.05).round() as usize..=20) as f64 * 0.05;
        worst[1] = worst[1].max(cvar_alpha(batch, wider)? - base);

        let c = rng.random_range(-5.0..5.0);
        let shifted = rebuild(losses.iter().map(|l| l + c).collect())?;
        worst[2] = worst[2].max((cvar_alpha(&shifted, *alpha)? - base - c).abs());

        let t = rng.random_range(0.1..4.0);
        let scaled = rebuild(losses.iter().map(|l| t * l).collect())?;
        worst[3] = worst[3].max((cvar_alpha(&scaled, *alpha)? - t * base).abs());
    }
    Ok(worst)
}

pub fn risk_oracle_suite(count: usize, seed: u64, tol: f64) -> Result<SuiteReport> {
    timed("risk-oracle agreement", || {
        let worst = oracle_disagreement(&random_batches(count, seed))?;
        Ok((worst <= tol, format!("{count} batches, max disagreement {worst:.3e} (tol {tol:.0e})")))
    })
}

pub fn coherence_suite(count: usize, seed: u64, tol: f64) -> Result<SuiteReport> {
    timed("cvar coherence", || {
        let v = coherence_violations(&random_batches(count, seed), derive_seed(seed, 1))?;
        let passed = v.iter().all(|&x| x <= tol);
        Ok((
            passed,
            format!("{count} batches, dominance {:.1e}, alpha {:.1e}, translation {:.1e}, homogeneity {:.1e} (tol {tol:.0e})", v[0], v[1], v[2], v[3]),
        ))
    })
}

// ----- gradient checks -----

/// Per-component relative error `|g - fd| / max(|g|, |fd|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic.iter().zip(numeric).map(|(g, f)| (g - f).abs() / g.abs().max(f.abs()).max(floor)).fold(0.0, f64::max)
}

/// Central finite differences of `f` at `x`.
pub fn central_difference<F: FnMut(&[f64]) -> Result<f64>>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let up = f(&probe)?;
            probe[j] = x[j] - h;
            let down = f(&probe)?;
            probe[j] = x[j];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Floor on the denominator of [`max_relative_error`] in the gradient suite.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

fn random_trajectories(rng: &mut Rng, count: usize, state_dim: usize, action_count: usize) -> Vec<Trajectory> {
    (0..count)
        .map(|_| {
            let horizon = rng.random_range(1..=4usize);
            let live = rng.random_range(1..=horizon);
            Trajectory {
                states: (0..=horizon).map(|_| (0..state_dim).map(|_| rng.random_range(-1.5..1.5)).collect()).collect(),
                actions: (0..horizon).map(|t| if t < live { rng.random_range(0..action_count) } else { 0 }).collect(),
                costs: vec![0.0; horizon],
                gamma: 0.9,
                live_steps: live,
            }
        })
        .collect()
}

/// Smallest gap between distinct sorted values.
fn min_gap(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Whether every live-step discriminator output stays well inside the clamp.
fn js_outputs_interior<'t>(disc: &Mlp, trajs: impl Iterator<Item = &'t Trajectory>, action_count: usize) -> Result<bool> {
    for traj in trajs {
        for t in 0..traj.live_steps {
            let f = disc.forward(&disc_input(&traj.states[t], traj.actions[t], action_count))?[0];
            if f < 1e3 * F_CLAMP || f > 1.0 - 1e3 * F_CLAMP {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Checks JS (risk-sensitive and mean-only expert terms) and W discriminator
/// gradients for every `lambda`, plus `Mlp::backward`, on `fixtures` random
/// tie-free fixtures. Returns the worst relative error and the number of
/// rejected (tied or saturated) draws.
pub fn gradient_errors(fixtures: usize, lambdas: &[f64], seed: u64) -> Result<(f64, usize)> {
    let mut rng = seeded(seed);
    let (state_dim, action_count) = (3, 2);
    let mut worst: f64 = 0.0;
    let mut rejected = 0;
    let mut accepted = 0;
    while accepted < fixtures {
        let hidden = [rng.random_range(2..=6usize), rng.random_range(2..=5usize)];
        let (n_agent, n_expert) = (rng.random_range(3..=9), rng.random_range(3..=9));
        let agent = random_trajectories(&mut rng, n_agent, state_dim, action_count);
        let expert = random_trajectories(&mut rng, n_expert, state_dim, action_count);
        let alpha = rng.random_range(0.1..0.9);
        let js = Mlp::with_hidden(state_dim + action_count, &hidden, 1, Activation::Sigmoid, &mut rng)?;
        let w = Mlp::with_hidden(state_dim + action_count, &hidden, 1, Activation::Identity, &mut rng)?;

        let a_js = surrogate_losses(&js, &agent, Head::Js)?;
        let e_js = surrogate_losses(&js, &expert, Head::Js)?;
        let a_w = surrogate_losses(&w, &agent, Head::Wasserstein)?;
        let e_w = surrogate_losses(&w, &expert, Head::Wasserstein)?;
        // away from ties the risk functionals are smooth; away from the
        // clamp the JS losses are smooth
        let tie_free = [&a_js.f1, &e_js.f2, &a_w.cf, &e_w.cf].iter().all(|v| min_gap(v) > 1e-4);
        let saturated = !js_outputs_interior(&js, agent.iter().chain(&expert), action_count)?;
        if !tie_free || saturated {
            rejected += 1;
            continue;
        }
        accepted += 1;

        for &lambda in lambdas {
            let cfg = RiskConfig::new(alpha, lambda, 0.9)?;
            for term in [ExpertTerm::RiskSensitive, ExpertTerm::MeanOnly] {
                let g = discriminator_gradient_js(&a_js, &e_js, &cfg, term)?;
                let fd = central_difference(
                    |p| {
                        let net = js.with_params(p.to_vec())?;
                        let (a, e) = (surrogate_losses(&net, &agent, Head::Js)?, surrogate_losses(&net, &expert, Head::Js)?);
                        discriminator_objective(&a, &e, &cfg, Head::Js, term)
                    },
                    js.params(),
                    FD_STEP,
                )?;
                worst = worst.max(max_relative_error(&g, &fd, RELATIVE_ERROR_FLOOR));
            }
            let g = discriminator_gradient_w(&a_w, &e_w, &cfg)?;
            let fd = central_difference(
                |p| {
                    let net = w.with_params(p.to_vec())?;
                    let (a, e) = (surrogate_losses(&net, &agent, Head::Wasserstein)?, surrogate_losses(&net, &expert, Head::Wasserstein)?);
                    discriminator_objective(&a, &e, &cfg, Head::Wasserstein, ExpertTerm::RiskSensitive)
                },
                w.params(),
                FD_STEP,
            )?;
            worst = worst.max(max_relative_error(&g, &fd, RELATIVE_ERROR_FLOOR));
        }

        // backward() for a random network and cotangent, every head type
        let heads = [Activation::Tanh, Activation::Identity, Activation::Sigmoid, Activation::Softmax];
        let head = heads[rng.random_range(0..heads.len())];
        let out = rng.random_range(1..=3usize);
        let net = Mlp::with_hidden(4, &hidden, out, head, &mut rng)?;
        let input: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let cot: Vec<f64> = (0..out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = net.backward(&input, &cot)?;
        let fd = central_difference(
            |p| Ok(net.with_params(p.to_vec())?.forward(&input)?.iter().zip(&cot).map(|(y, c)| y * c).sum()),
            net.params(),
            FD_STEP,
        )?;
        worst = worst.max(max_relative_error(&g, &fd, RELATIVE_ERROR_FLOOR));
    }
    Ok((worst, rejected))
}

pub fn gradient_suite(fixtures: usize, seed: u64, tol: f64) -> Result<SuiteReport> {
    timed("gradient checks", || {
        let (worst, rejected) = gradient_errors(fixtures, &[0.0, 0.5, 2.0], seed)?;
        Ok((worst <= tol, format!("{fixtures} fixtures ({rejected} tied draws skipped), max relative error {worst:.3e} (tol {tol:.0e})")))
    })
}

// ----- policy-gradient unbiasedness -----

/// Softmax policy linear in the one-hot state.
pub fn linear_softmax(state_count: usize, action_count: usize, params: Vec<f64>) -> Result<CategoricalPolicy> {
    let net = Mlp::zeros(vec![state_count, action_count], vec![Activation::Softmax])?.with_params(params)?;
    Ok(CategoricalPolicy::new(net)?)
}

/// Exact `(E[C], CVaR_alpha[C], H)` by enumeration.
pub fn exact_statistics(mdp: &TabularMdp, policy: &CategoricalPolicy, alpha: f64) -> Result<[f64; 3]> {
    let paths = enumerate_trajectories(mdp, policy)?;
    let probs: Vec<f64> = paths.iter().map(|p| p.probability).collect();
    let total: f64 = probs.iter().sum();
    let batch = LossBatch::weighted(paths.iter().map(|p| p.trajectory.loss()).collect(), probs.iter().map(|p| p / total).collect())?;
    let mut entropy = 0.0;
    for (path, p) in paths.iter().zip(&probs) {
        let traj = &path.trajectory;
        let mut discount = 1.0;
        for t in 0..traj.live_steps {
            entropy -= p / total * discount * policy.log_prob(&traj.states[t], traj.actions[t])?;
            discount *= traj.gamma;
        }
    }
    Ok([batch.mean(), cvar_alpha(&batch, alpha)?, entropy])
}

/// Whether the VaR of the exact loss law sits strictly inside an atom, so
/// CVaR is differentiable in the policy parameters.
pub fn strict_tail_crossing(mdp: &TabularMdp, policy: &CategoricalPolicy, alpha: f64) -> Result<bool> {
    let paths = enumerate_trajectories(mdp, policy)?;
    let losses: Vec<f64> = paths.iter().map(|p| p.trajectory.loss()).collect();
    let probs: Vec<f64> = paths.iter().map(|p| p.probability).collect();
    let total: f64 = probs.iter().sum();
    let nu = var_alpha(&LossBatch::weighted(losses.clone(), probs.iter().map(|p| p / total).collect())?, alpha)?;
    let above: f64 = losses.iter().zip(&probs).filter(|(l, _)| **l > nu + 1e-12).map(|(_, p)| p / total).sum();
    let at_or_above: f64 = losses.iter().zip(&probs).filter(|(l, _)| **l >= nu - 1e-12).map(|(_, p)| p / total).sum();
    Ok(above < alpha - 1e-6 && at_or_above > alpha + 1e-6)
}

/// Monte-Carlo versus exact gradient of one functional.
#[derive(Debug, Clone)]
pub struct GradientComparison {
    pub fixture: &'static str,
    pub functional: &'static str,
    pub exact: Vec<f64>,
    pub estimate: Vec<f64>,
    pub standard_error: Vec<f64>,
}

impl GradientComparison {
    /// Largest `|estimate - exact| / SE` over components with nonzero SE.
    pub fn max_z(&self) -> f64 {
        self.exact
            .iter()
            .zip(&self.estimate)
            .zip(&self.standard_error)
            .map(|((e, m), se)| if *se > 0.0 { (m - e).abs() / se } else if (m - e).abs() < 1e-9 { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

fn component_stats(terms: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = terms.len() as f64;
    let p = terms[0].len();
    let mean: Vec<f64> = (0..p).map(|j| terms.iter().map(|t| t[j]).sum::<f64>() / n).collect();
    let se = (0..p)
        .map(|j| (terms.iter().map(|t| (t[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt())
        .collect();
    (mean, se)
}

/// Compares the library estimators of the gradients of `E[C]`,
/// `CVaR_alpha[C]` and the causal entropy against finite differences of the
/// exact enumerated values.
pub fn unbiasedness_comparisons(
    name: &'static str,
    mdp: &TabularMdp,
    policy: &CategoricalPolicy,
    alpha: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<GradientComparison>> {
    if !strict_tail_crossing(mdp, policy, alpha)? {
        return Err(Error::Invalid(format!("{name}: VaR sits on an atom boundary; CVaR is not differentiable there")));
    }
    let mut exact = vec![Vec::new(); 3];
    for k in 0..3 {
        exact[k] = central_difference(|p| Ok(exact_statistics(mdp, &policy.with_params(p.to_vec())?, alpha)?[k]), policy.params(), 1e-5)?;
    }

    let mut losses = Vec::with_capacity(samples);
    let mut scores = Vec::with_capacity(samples);
    let mut entropy_terms = Vec::with_capacity(samples);
    let mut entropy_cache: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
    const CHUNK: usize = 100_000;
    for (c, start) in (0..samples).step_by(CHUNK).enumerate() {
        let trajs = rollout_batch(mdp, policy, CHUNK.min(samples - start), derive_seed(seed, c as u64))?;
        for traj in &trajs {
            losses.push(traj.loss());
            scores.push(policy.trajectory_score(traj)?);
            // the entropy term depends only on the visited states and actions
            let mut key = traj.states.iter().map(|s| mdp.state_index(s)).collect::<std::result::Result<Vec<_>, _>>()?;
            key.extend(&traj.actions);
            if !entropy_cache.contains_key(&key) {
                entropy_cache.insert(key.clone(), entropy_gradient(policy, std::slice::from_ref(traj))?);
            }
            entropy_terms.push(entropy_cache[&key].clone());
        }
    }

    let mean_estimate = policy_gradient_mean(&losses, &scores, false);
    let cvar_estimate = policy_gradient_cvar(&losses, &scores, alpha)?;
    let nu = var_alpha(&LossBatch::uniform(losses.clone())?, alpha)?;
    let mean_terms: Vec<Vec<f64>> = losses.iter().zip(&scores).map(|(l, s)| s.iter().map(|x| l * x).collect()).collect();
    let cvar_terms: Vec<Vec<f64>> = losses.iter().zip(&scores).map(|(l, s)| s.iter().map(|x| (l - nu).max(0.0) * x / alpha).collect()).collect();
    let (entropy_estimate, entropy_se) = component_stats(&entropy_terms);
    let mut out = Vec::new();
    for (functional, estimate, terms, exact) in [
        ("mean", mean_estimate, mean_terms, exact[0].clone()),
        ("cvar", cvar_estimate, cvar_terms, exact[1].clone()),
    ] {
        let (_, standard_error) = component_stats(&terms);
        out.push(GradientComparison { fixture: name, functional, exact, estimate, standard_error });
    }
    out.push(GradientComparison { fixture: name, functional: "entropy", exact: exact[2].clone(), estimate: entropy_estimate, standard_error: entropy_se });
    Ok(out)
}

/// The two enumerable fixtures with the policies used for the unbiasedness check.
pub fn unbiasedness_fixtures() -> Result<Vec<(&'static str, TabularMdp, CategoricalPolicy, f64)>> {
    Ok(vec![
        ("bandit", fixtures::risky_bandit(), linear_softmax(1, 2, vec![0.3, -0.2, 0.0, 0.0])?, 0.3),
        ("two-state", fixtures::two_state(), linear_softmax(2, 2, vec![0.4, -0.3, 0.2, 0.5, -0.1, 0.1])?, 0.3),
    ])
}

pub fn unbiasedness_suite(samples: usize, seed: u64) -> Result<SuiteReport> {
    timed("policy-gradient unbiasedness", || {
        let mut worst: f64 = 0.0;
        let mut parts = Vec::new();
        for (i, (name, mdp, policy, alpha)) in unbiasedness_fixtures()?.into_iter().enumerate() {
            for c in unbiasedness_comparisons(name, &mdp, &policy, alpha, samples, derive_seed(seed, i as u64))? {
                worst = worst.max(c.max_z());
                parts.push(format!("{}/{} z {:.2}", c.fixture, c.functional, c.max_z()));
            }
        }
        Ok((worst <= 3.0, format!("{samples} samples, {} (tol 3 SE)", parts.join(", "))))
    })
}

// ----- distorted occupancy -----

fn random_table(rng: &mut Rng, states: usize, actions: usize) -> TabularPolicy {
    TabularPolicy::new(
        (0..states)
            .map(|_| {
                let raw: Vec<f64> = (0..actions).map(|_| rng.random_range(0.05..1.0)).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|x| x / total).collect()
            })
            .collect(),
    )
}

/// All tabular fixtures, with the grid shortened so enumeration stays small.
pub fn tabular_fixtures() -> Vec<TabularMdp> {
    vec![
        fixtures::risky_bandit(),
        fixtures::two_state(),
        fixtures::gridworld(&GridSpec { horizon: 3, ..GridSpec::default() }),
    ]
}

/// Largest `|E_{d_xi*}[c] - rho_alpha^lambda[C]|` and `|mass - (1 - gamma^T)/(1 - gamma)|`
/// over random stochastic policies and `(alpha, lambda)` pairs.
pub fn occupancy_errors(policies_per_fixture: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = seeded(seed);
    let (mut worst_cost, mut worst_mass): (f64, f64) = (0.0, 0.0);
    for mdp in tabular_fixtures() {
        for _ in 0..policies_per_fixture {
            let policy = random_table(&mut rng, mdp.state_count(), mdp.action_count());
            let cfg = RiskConfig::new(rng.random_range(0.05..1.0), rng.random_range(0.0..3.0), mdp.spec().gamma)?;
            let d = distorted_occupancy(&mdp, &policy, &cfg)?;
            let paths = enumerate_trajectories(&mdp, &policy)?;
            let batch = LossBatch::weighted(paths.iter().map(|p| p.trajectory.loss()).collect(), d.probabilities.clone())?;
            worst_cost = worst_cost.max((d.expected_cost(&mdp) - rho_lambda(&batch, &cfg)?).abs());
            let (g, t) = (mdp.spec().gamma, mdp.spec().horizon as i32);
            worst_mass = worst_mass.max((d.total_mass() - (1.0 - g.powi(t)) / (1.0 - g)).abs());
        }
    }
    Ok((worst_cost, worst_mass))
}

pub fn occupancy_suite(policies_per_fixture: usize, seed: u64, tol: f64) -> Result<SuiteReport> {
    timed("distorted-occupancy identity", || {
        let (cost, mass) = occupancy_errors(policies_per_fixture, seed)?;
        Ok((cost <= tol && mass <= tol, format!("cost identity error {cost:.3e}, mass error {mass:.3e} (tol {tol:.0e})")))
    })
}

// ----- training-loop invariants -----

/// Expert data on the two-state fixture from a fixed deterministic policy.
pub fn small_expert_data(count: usize, seed: u64) -> Result<(TabularMdp, Vec<Trajectory>)> {
    let mdp = fixtures::two_state();
    let policy = TabularPolicy::deterministic(&[1, 0], 2);
    let (_, records) = generate_expert_dataset(&policy, None, &mdp, count, seed, None)?;
    Ok((mdp, records.iter().map(|r| r.to_trajectory()).collect()))
}

fn small_algo(variant: Variant, lambda: f64) -> Result<ImitationAlgo> {
    let mut algo = ImitationAlgo::new(variant, RiskConfig::new(0.3, lambda, 0.9)?);
    algo.batch_size = 20;
    algo.policy_hidden = vec![8];
    algo.disc_hidden = vec![8];
    algo.generator_steps = 2;
    algo.discriminator_steps = 2;
    algo.policy_optimizer = PolicyOptimizer::KlConstrained;
    Ok(algo)
}

/// Largest per-iteration parameter difference between JS-RS-GAIL with
/// `lambda = 0` and GAIL with matched step counts, policy and discriminator.
pub fn collapse_gap(iterations: usize, seed: u64) -> Result<f64> {
    let (mdp, expert) = small_expert_data(40, derive_seed(seed, 99))?;
    let mut js = Trainer::new(small_algo(Variant::JsRsGail, 0.0)?, &mdp, expert.clone(), seed)?;
    let mut gail = Trainer::new(small_algo(Variant::Gail, 0.0)?, &mdp, expert, seed)?;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for _ in 0..iterations {
        js.iterate()?;
        gail.iterate()?;
        worst = worst.max(diff(js.policy().params(), gail.policy().params()));
        worst = worst.max(diff(js.discriminator().params(), gail.discriminator().params()));
    }
    Ok(worst)
}

pub fn collapse_suite(iterations: usize, seed: u64, tol: f64) -> Result<SuiteReport> {
    timed("lambda=0 collapse", || {
        let gap = collapse_gap(iterations, seed)?;
        Ok((gap <= tol, format!("{iterations} iterations, max parameter gap {gap:.3e} (tol {tol:.0e})")))
    })
}

/// `(violations, updates)` of `max |w| <= clip_bound` over a W-RS-GAIL run.
pub fn clipping_violations(iterations: usize, seed: u64) -> Result<(usize, usize)> {
    let (mdp, expert) = small_expert_data(40, derive_seed(seed, 99))?;
    let mut algo = small_algo(Variant::WRsGail, 0.5)?;
    algo.discriminator_steps = 5;
    // a large step pushes weights against the bound on every update
    algo.disc_lr = 0.05;
    let bound = algo.clip_bound;
    let mut trainer = Trainer::new(algo, &mdp, expert, seed)?;
    let mut violations = usize::from(trainer.discriminator().max_abs_param() > bound);
    for _ in 0..iterations {
        let m = trainer.iterate()?;
        violations += usize::from(m.disc_max_abs > bound);
    }
    Ok((violations, trainer.disc_updates()))
}

pub fn clipping_suite(iterations: usize, seed: u64) -> Result<SuiteReport> {
    timed("weight clipping", || {
        let (violations, updates) = clipping_violations(iterations, seed)?;
        Ok((violations == 0, format!("{violations} violations over {updates} discriminator updates")))
    })
}

/// Suite sizes for [`run_all`].
#[derive(Debug, Clone, Copy)]
pub struct VerifySizes {
    pub batches: usize,
    pub gradient_fixtures: usize,
    pub unbiasedness_samples: usize,
    pub occupancy_policies: usize,
    pub collapse_iterations: usize,
    pub clipping_iterations: usize,
}

impl Default for VerifySizes {
    fn default() -> Self {
        Self {
            batches: 1000,
            gradient_fixtures: 100,
            unbiasedness_samples: 1_000_000,
            occupancy_policies: 20,
            collapse_iterations: 50,
            clipping_iterations: 50,
        }
    }
}

/// Runs every suite at the given sizes.
pub fn run_all(sizes: &VerifySizes, seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        risk_oracle_suite(sizes.batches, seed, 1e-9)?,
        coherence_suite(sizes.batches, seed, 1e-10)?,
        gradient_suite(sizes.gradient_fixtures, derive_seed(seed, 1), 1e-4)?,
        unbiasedness_suite(sizes.unbiasedness_samples, derive_seed(seed, 2))?,
        occupancy_suite(sizes.occupancy_policies, derive_seed(seed, 3), 1e-8)?,
        collapse_suite(sizes.collapse_iterations, derive_seed(seed, 4), 1e-12)?,
        clipping_suite(sizes.clipping_iterations, derive_seed(seed, 5))?,
    ])
}
