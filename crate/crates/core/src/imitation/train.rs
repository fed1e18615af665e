//! The alternating discriminator / policy loop.

use serde::{Deserialize, Serialize};

use super::kl::{fisher_states, kl_constrained_step, mean_kl};
use super::objective::{causal_entropy, gradient_from_coefficients, objective_coefficients, step_log_probs};
use super::surrogate::{
    discriminator_gradient_js, discriminator_gradient_w, discriminator_objective, surrogate_losses, surrogate_values,
    ExpertTerm, Head,
};
use super::{ImitationAlgo, PolicyOptimizer};
use crate::env::{rollout_batch, Environment, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Direction, Mlp};
use crate::policy::CategoricalPolicy;
use crate::risk::{summarize, LossBatch, RiskConfig};
use crate::rng::{derive_seed, seeded};

const POLICY_INIT_TAG: u64 = 0;
const DISC_INIT_TAG: u64 = 1;
const ROLLOUT_TAG: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Train,
}

/// One line of the training log.
///
/// `mean` through `rho_lambda` describe the true discounted cost of the
/// batch sampled at the start of the iteration, with the configured
/// `(alpha, lambda)`. The `surrogate_*` fields describe the agent loss under
/// the discriminator used for the first policy step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    pub phase: Phase,
    pub mean: f64,
    pub var_alpha: f64,
    pub cvar_alpha: f64,
    pub rho_lambda: f64,
    pub surrogate_mean: f64,
    pub surrogate_cvar: f64,
    pub disc_objective: f64,
    pub kl: f64,
    pub entropy: f64,
    /// Largest `|w|` seen after any discriminator update of this iteration.
    pub disc_max_abs: f64,
    pub disc_updates: usize,
    pub policy_updates: usize,
}

/// Stateful training run; each [`Trainer::iterate`] call is one outer iteration.
pub struct Trainer<'a, E: Environment + ?Sized> {
    algo: ImitationAlgo,
    env: &'a E,
    expert: Vec<Trajectory>,
    seed: u64,
    policy: CategoricalPolicy,
    disc: Mlp,
    policy_adam: Adam,
    disc_adam: Adam,
    iteration: usize,
    disc_updates: usize,
    policy_updates: usize,
}

impl<'a, E: Environment + ?Sized> Trainer<'a, E> {
    pub fn new(algo: ImitationAlgo, env: &'a E, expert: Vec<Trajectory>, seed: u64) -> Result<Self> {
        algo.validate()?;
        let spec = env.spec();
        if expert.is_empty() {
            return Err(Error::Invalid("expert dataset is empty".into()));
        }
        for (i, traj) in expert.iter().enumerate() {
            traj.validate()?;
            if traj.states.iter().any(|s| s.len() != spec.observation_dim) || traj.actions.iter().any(|&a| a >= spec.action_count) {
                return Err(Error::Invalid(format!("expert trajectory {i} does not match environment '{}'", spec.name)));
            }
        }
        let input = algo.policy_view.as_ref().map_or(spec.observation_dim, Vec::len);
        let net = Mlp::with_hidden(input, &algo.policy_hidden, spec.action_count, Activation::Softmax, &mut seeded(derive_seed(seed, POLICY_INIT_TAG)))?;
        let policy = match &algo.policy_view {
            Some(view) => CategoricalPolicy::with_view(net, view.clone())?,
            None => CategoricalPolicy::new(net)?,
        };
        let head = match algo.variant.head() {
            Head::Js => Activation::Sigmoid,
            Head::Wasserstein => Activation::Identity,
        };
        let mut disc = Mlp::with_hidden(
            spec.observation_dim + spec.action_count,
            &algo.disc_hidden,
            1,
            head,
            &mut seeded(derive_seed(seed, DISC_INIT_TAG)),
        )?;
        if algo.variant.head() == Head::Wasserstein {
            disc.clip_in_place(algo.clip_bound);
        }
        let policy_adam = Adam::new(policy.param_count(), algo.policy_lr);
        let disc_adam = Adam::new(disc.param_count(), algo.disc_lr);
        Ok(Self { algo, env, expert, seed, policy, disc, policy_adam, disc_adam, iteration: 0, disc_updates: 0, policy_updates: 0 })
    }

    pub fn algo(&self) -> &ImitationAlgo {
        &self.algo
    }

    pub fn policy(&self) -> &CategoricalPolicy {
        &self.policy
    }

    pub fn discriminator(&self) -> &Mlp {
        &self.disc
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn disc_updates(&self) -> usize {
        self.disc_updates
    }

    pub fn policy_updates(&self) -> usize {
        self.policy_updates
    }

    fn sample(&self, iter_seed: u64, step: usize) -> Result<Vec<Trajectory>> {
        Ok(rollout_batch(self.env, &self.policy, self.algo.batch_size, derive_seed(iter_seed, step as u64))?)
    }

    fn diverged(&self, what: &str) -> Error {
        Error::Diverged { iteration: self.iteration, diagnostic: what.to_string() }
    }

    pub fn iterate(&mut self) -> Result<IterationMetrics> {
        let i = self.iteration;
        let algo = &self.algo;
        let phase = if i < algo.pretrain_iters { Phase::Pretrain } else { Phase::Train };
        let cfg = RiskConfig { lambda: algo.effective_lambda(i), ..algo.risk };
        let head = algo.variant.head();
        let term = if phase == Phase::Pretrain { ExpertTerm::RiskSensitive } else { algo.variant.expert_term() };
        let iter_seed = derive_seed(derive_seed(self.seed, ROLLOUT_TAG), i as u64);

        let mut batch = self.sample(iter_seed, 0)?;
        let true_losses: Vec<f64> = batch.iter().map(Trajectory::loss).collect();
        if true_losses.iter().any(|l| !l.is_finite()) {
            return Err(self.diverged("non-finite environment loss"));
        }
        let stats = summarize(&LossBatch::uniform(true_losses)?, &self.algo.risk)?;

        let mut disc_objective = f64::NAN;
        let mut disc_max_abs: f64 = 0.0;
        for d in 0..self.algo.discriminator_steps {
            let agent = surrogate_losses(&self.disc, &batch, head)?;
            let expert = surrogate_losses(&self.disc, &self.expert, head)?;
            let objective = discriminator_objective(&agent, &expert, &cfg, head, term)?;
            if d == 0 {
                disc_objective = objective;
            }
            let grad = match head {
                Head::Js => discriminator_gradient_js(&agent, &expert, &cfg, term)?,
                Head::Wasserstein => discriminator_gradient_w(&agent, &expert, &cfg)?,
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(self.diverged("non-finite discriminator gradient"));
            }
            self.disc_adam.step(self.disc.params_mut(), &grad, Direction::Ascend);
            if head == Head::Wasserstein {
                self.disc.clip_in_place(self.algo.clip_bound);
            }
            disc_max_abs = disc_max_abs.max(self.disc.max_abs_param());
            self.disc_updates += 1;
        }

        let (mut surrogate_mean, mut surrogate_cvar, mut entropy, mut kl) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..self.algo.generator_steps {
            if k > 0 {
                batch = self.sample(iter_seed, k)?;
            }
            let s = surrogate_values(&self.disc, &batch, head)?;
            let losses = match head {
                Head::Js => s.f1,
                Head::Wasserstein => s.cf,
            };
            if losses.iter().any(|l| !l.is_finite()) {
                return Err(self.diverged("non-finite surrogate loss"));
            }
            let log_probs = step_log_probs(&self.policy, &batch)?;
            if k == 0 {
                let summary = summarize(&LossBatch::uniform(losses.clone())?, &cfg)?;
                surrogate_mean = summary.mean;
                surrogate_cvar = summary.cvar_alpha;
                entropy = causal_entropy(&log_probs, &batch);
            }
            let coeffs = objective_coefficients(&losses, &log_probs, &batch, &cfg, self.algo.baseline, self.algo.entropy_weight)?;
            let grad = gradient_from_coefficients(&self.policy, &batch, &coeffs)?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(self.diverged("non-finite policy gradient"));
            }
            match self.algo.policy_optimizer {
                PolicyOptimizer::ReinforceAdam => {
                    let states = fisher_states(&batch, self.algo.kl.fisher_states.max(1));
                    let old: Vec<Vec<f64>> = states.iter().map(|s| self.policy.probs(s)).collect::<std::result::Result<_, _>>()?;
                    self.policy_adam.step(self.policy.params_mut(), &grad, Direction::Descend);
                    kl = mean_kl(&old, &self.policy, &states)?;
                }
                PolicyOptimizer::KlConstrained => {
                    let outcome = kl_constrained_step(&self.policy, &grad, &batch, &coeffs, &self.algo.kl)?;
                    self.policy = outcome.policy;
                    kl = outcome.kl;
                }
            }
            if self.policy.params().iter().any(|p| !p.is_finite()) {
                return Err(self.diverged("non-finite policy parameters"));
            }
            self.policy_updates += 1;
        }

        self.iteration += 1;
        Ok(IterationMetrics {
            iter: i,
            phase,
            mean: stats.mean,
            var_alpha: stats.var_alpha,
            cvar_alpha: stats.cvar_alpha,
            rho_lambda: stats.rho_lambda,
            surrogate_mean,
            surrogate_cvar,
            disc_objective,
            kl,
            entropy,
            disc_max_abs,
            disc_updates: self.disc_updates,
            policy_updates: self.policy_updates,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<IterationMetrics>,
    pub policy: CategoricalPolicy,
    pub discriminator: Mlp,
}

/// Runs `iterations` outer iterations from a fresh initialization.
pub fn train<E: Environment + ?Sized>(
    algo: &ImitationAlgo,
    env: &E,
    expert: &[Trajectory],
    iterations: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(algo.clone(), env, expert.to_vec(), seed)?;
    let mut log = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let metrics = trainer.iterate()?;
        log::info!(
            "iter {:>4} mean {:+.4} cvar {:+.4} disc {:+.4} kl {:.2e}",
            metrics.iter,
            metrics.mean,
            metrics.cvar_alpha,
            metrics.disc_objective,
            metrics.kl
        );
        log.push(metrics);
    }
    Ok(TrainOutcome { log, policy: trainer.policy, discriminator: trainer.disc })
}
