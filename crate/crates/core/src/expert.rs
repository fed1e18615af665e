//! Risk-sensitive experts: mean-CVaR REINFORCE on true costs, exhaustive
//! search over deterministic tabular policies, and expert datasets.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{enumerate_trajectories, rollout_batch, DatasetHeader, Environment, TabularMdp, Trajectory, TrajectoryRecord, DATASET_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::imitation::{gradient_from_coefficients, objective_coefficients, step_log_probs};
use crate::nn::{Activation, Adam, Direction, Mlp};
use crate::policy::{CategoricalPolicy, Policy, TabularPolicy};
use crate::risk::{scaled_rho_lambda, summarize, LossBatch, RiskConfig, RiskSummary};
use crate::rng::{derive_seed, seeded};

const INIT_TAG: u64 = 0;
const TRAIN_TAG: u64 = 1;
const EVAL_TAG: u64 = 2;

/// Hyperparameters of the REINFORCE expert trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub baseline: bool,
    pub entropy_weight: f64,
    /// Evaluate (and possibly keep) the policy every `eval_every` iterations.
    pub eval_every: usize,
    pub eval_trajectories: usize,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self { hidden: vec![32, 32], batch_size: 100, lr: 1e-2, baseline: true, entropy_weight: 0.0, eval_every: 10, eval_trajectories: 300 }
    }
}

#[derive(Debug, Clone)]
pub struct ExpertOutcome {
    /// Policy with the lowest evaluated `rho_alpha^lambda`.
    pub policy: CategoricalPolicy,
    pub best_iteration: usize,
    pub best: RiskSummary,
    /// `(iteration, evaluation)` at every evaluation point.
    pub evaluations: Vec<(usize, RiskSummary)>,
}

/// REINFORCE on the true discounted cost with objective `E[C] + lambda CVaR_alpha[C]`.
pub fn train_cvar_expert<E: Environment + ?Sized>(
    env: &E,
    cfg: &RiskConfig,
    iterations: usize,
    seed: u64,
    opts: &ExpertConfig,
) -> Result<ExpertOutcome> {
    if opts.batch_size == 0 || opts.eval_every == 0 || opts.eval_trajectories == 0 {
        return Err(Error::Config("expert batch_size, eval_every and eval_trajectories must be positive".into()));
    }
    let spec = env.spec();
    let net = Mlp::with_hidden(spec.observation_dim, &opts.hidden, spec.action_count, Activation::Softmax, &mut seeded(derive_seed(seed, INIT_TAG)))?;
    let mut policy = CategoricalPolicy::new(net)?;
    let mut adam = Adam::new(policy.param_count(), opts.lr);
    let eval_seed = derive_seed(seed, EVAL_TAG);
    let evaluate = |p: &CategoricalPolicy, i: usize| -> Result<RiskSummary> {
        let trajs = rollout_batch(env, p, opts.eval_trajectories, derive_seed(eval_seed, i as u64))?;
        Ok(summarize(&LossBatch::uniform(trajs.iter().map(Trajectory::loss).collect())?, cfg)?)
    };

    let mut evaluations = vec![(0, evaluate(&policy, 0)?)];
    let mut best = (0, evaluations[0].1, policy.clone());
    for i in 1..=iterations {
        let batch = rollout_batch(env, &policy, opts.batch_size, derive_seed(derive_seed(seed, TRAIN_TAG), i as u64))?;
        let losses: Vec<f64> = batch.iter().map(Trajectory::loss).collect();
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::Diverged { iteration: i, diagnostic: "non-finite environment loss".into() });
        }
        let log_probs = step_log_probs(&policy, &batch)?;
        let coeffs = objective_coefficients(&losses, &log_probs, &batch, cfg, opts.baseline, opts.entropy_weight)?;
        let grad = gradient_from_coefficients(&policy, &batch, &coeffs)?;
        adam.step(policy.params_mut(), &grad, Direction::Descend);
        if policy.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { iteration: i, diagnostic: "non-finite expert parameters".into() });
        }
        if i % opts.eval_every == 0 || i == iterations {
            let summary = evaluate(&policy, i)?;
            log::info!("expert iter {i:>4} mean {:+.4} cvar {:+.4} rho {:+.4}", summary.mean, summary.cvar_alpha, summary.rho_lambda);
            if summary.rho_lambda < best.1.rho_lambda {
                best = (i, summary, policy.clone());
            }
            evaluations.push((i, summary));
        }
    }
    Ok(ExpertOutcome { policy: best.2, best_iteration: best.0, best: best.1, evaluations })
}

/// Exact `(1 + lambda) rho_alpha^lambda` of the discounted cost under `policy`.
pub fn exact_scaled_rho<P: Policy + ?Sized>(mdp: &TabularMdp, policy: &P, cfg: &RiskConfig) -> Result<f64> {
    let paths = enumerate_trajectories(mdp, policy)?;
    let losses = paths.iter().map(|p| p.trajectory.loss()).collect();
    let weights = paths.iter().map(|p| p.probability).collect();
    Ok(scaled_rho_lambda(&LossBatch::weighted(losses, weights)?, cfg)?)
}

/// Upper bound on the number of deterministic policies searched.
pub const POLICY_SEARCH_LIMIT: f64 = 1e6;

/// Deterministic stationary policy minimizing the exact `(1 + lambda) rho`,
/// found by exhaustive search. Ties go to the lexicographically first choice.
pub fn exact_tabular_expert(mdp: &TabularMdp, cfg: &RiskConfig) -> Result<(TabularPolicy, f64)> {
    let (ns, na) = (mdp.state_count(), mdp.action_count());
    let count = (na as f64).powi(ns as i32);
    if count > POLICY_SEARCH_LIMIT {
        return Err(Error::Invalid(format!("{count:.3e} deterministic policies exceed the search limit {POLICY_SEARCH_LIMIT:.0e}")));
    }
    let mut choices = vec![0usize; ns];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let value = exact_scaled_rho(mdp, &TabularPolicy::deterministic(&choices, na), cfg)?;
        if best.as_ref().is_none_or(|(_, b)| value < b - 1e-12) {
            best = Some((choices.clone(), value));
        }
        // odometer increment, last state fastest
        let mut s = ns;
        loop {
            if s == 0 {
                let (choices, value) = best.expect("at least one policy evaluated");
                return Ok((TabularPolicy::deterministic(&choices, na), value));
            }
            s -= 1;
            choices[s] += 1;
            if choices[s] < na {
                break;
            }
            choices[s] = 0;
        }
    }
}

/// SHA-256 over the rows of a tabular policy.
pub fn tabular_checksum(policy: &TabularPolicy) -> String {
    let mut hasher = Sha256::new();
    for row in &policy.table {
        hasher.update((row.len() as u64).to_le_bytes());
        for p in row {
            hasher.update(p.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

/// `count` expert rollouts with a provenance header.
pub fn generate_expert_dataset<E, P>(
    policy: &P,
    policy_checksum: Option<String>,
    env: &E,
    count: usize,
    seed: u64,
    config: Option<serde_json::Value>,
) -> Result<(DatasetHeader, Vec<TrajectoryRecord>)>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    if count == 0 {
        return Err(Error::Invalid("expert dataset needs at least one trajectory".into()));
    }
    let trajs = rollout_batch(env, policy, count, seed)?;
    let name = &env.spec().name;
    let records = trajs.iter().enumerate().map(|(i, t)| TrajectoryRecord::new(t, name, seed, i as u64)).collect();
    let header = DatasetHeader { format_version: DATASET_FORMAT_VERSION, env: name.clone(), seed, count, policy_checksum, config };
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::CostAtom;
    use crate::fixtures;

    #[test]
    fn single_action_mdp_has_one_policy() {
        let mdp = TabularMdp::with_costs("one", vec![vec![vec![1.0]]], vec![vec![2.0]], vec![1.0], 3, 0.5).unwrap();
        let cfg = RiskConfig::new(0.3, 1.0, 0.5).unwrap();
        let (policy, value) = exact_tabular_expert(&mdp, &cfg).unwrap();
        assert_eq!(policy.table, vec![vec![1.0]]);
        // (1 + lambda) * (2 + 1 + 0.5)
        assert!((value - 7.0).abs() < 1e-12);
    }

    #[test]
    fn bandit_choices_follow_lambda() {
        let mdp = fixtures::risky_bandit();
        let neutral = RiskConfig::new(0.2, 0.0, 0.9).unwrap();
        let averse = RiskConfig::new(0.2, 1.0, 0.9).unwrap();
        assert_eq!(exact_tabular_expert(&mdp, &neutral).unwrap().0.table[0], vec![0.0, 1.0]);
        assert_eq!(exact_tabular_expert(&mdp, &averse).unwrap().0.table[0], vec![1.0, 0.0]);
    }

    #[test]
    fn lambda_zero_matches_dynamic_programming() {
        // the DP optimum over non-stationary policies is stationary on this chain,
        // so the exhaustive search must reach the same value
        let transitions = vec![
            vec![vec![0.2, 0.8, 0.0], vec![0.0, 0.3, 0.7]],
            vec![vec![0.5, 0.0, 0.5], vec![0.0, 0.0, 1.0]],
            vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
        ];
        let costs = vec![
            vec![vec![CostAtom::sure(1.0)], vec![CostAtom { value: 0.0, probability: 0.5 }, CostAtom { value: 3.0, probability: 0.5 }]],
            vec![vec![CostAtom::sure(2.0)], vec![CostAtom::sure(2.5)]],
            vec![vec![CostAtom::sure(0.0)], vec![CostAtom::sure(0.0)]],
        ];
        let mdp = TabularMdp::new("chain", transitions, costs, vec![0.6, 0.4, 0.0], 4, 0.9).unwrap();
        let cfg = RiskConfig::new(0.3, 0.0, 0.9).unwrap();
        let (_, exact) = exact_tabular_expert(&mdp, &cfg).unwrap();

        let mut value = vec![0.0; 3];
        for _ in 0..4 {
            value = (0..3)
                .map(|s| {
                    (0..2)
                        .map(|a| mdp.expected_cost(s, a) + 0.9 * (0..3).map(|n| mdp.transition(s, a, n) * value[n]).sum::<f64>())
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
        }
        let dp: f64 = mdp.initial_distribution().iter().zip(&value).map(|(p, v)| p * v).sum();
        assert!((exact - dp).abs() < 1e-12, "{exact} vs {dp}");
    }

    #[test]
    fn dataset_has_requested_count_and_checksum() {
        let mdp = fixtures::risky_bandit();
        let policy = TabularPolicy::deterministic(&[0], 2);
        let checksum = tabular_checksum(&policy);
        let (header, records) = generate_expert_dataset(&policy, Some(checksum.clone()), &mdp, 100, 5, None).unwrap();
        assert_eq!(records.len(), 100);
        assert_eq!(header.count, 100);
        assert_eq!(header.policy_checksum.as_deref(), Some(checksum.as_str()));
        // the safe arm is deterministic, so every record carries the same trajectory
        assert!(records.iter().all(|r| r.to_trajectory() == records[0].to_trajectory()));
        assert!(generate_expert_dataset(&policy, None, &mdp, 0, 5, None).is_err());
    }
}
