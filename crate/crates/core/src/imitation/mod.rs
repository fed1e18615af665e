//! Adversarial imitation: GAIL, RAIL and the two risk-sensitive variants
//! (JS and Wasserstein), their gradient estimators and the alternating
//! training loop.
//!
//! Sign conventions: the discriminator ascends
//! `(1+lambda)(rho[agent loss] - rho[expert loss])`, and the policy descends
//! `-entropy_weight * H + (1+lambda) rho[agent loss]`. With a JS head the
//! agent loss is `F1 = sum_t gamma^t log f` and the expert loss is `-F2`.

mod kl;
mod objective;
mod surrogate;
mod train;

pub use kl::{conjugate_gradient, kl_constrained_step, mean_kl, natural_step, KlStepConfig, KlStepOutcome};
pub use objective::{
    causal_entropy, entropy_gradient, gradient_from_coefficients, log_q_values, objective_coefficients,
    policy_gradient_cvar, policy_gradient_mean, risk_weights, step_log_probs, StepCoefficients,
};
pub use surrogate::{
    disc_input, discriminator_gradient_js, discriminator_gradient_w, discriminator_objective, scaled_rho_weights,
    surrogate_losses, surrogate_values, ExpertTerm, Head, SurrogateLosses, F_CLAMP,
};
pub use train::{train, IterationMetrics, Phase, TrainOutcome, Trainer};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::RiskConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Gail,
    Rail,
    JsRsGail,
    WRsGail,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Gail, Variant::Rail, Variant::JsRsGail, Variant::WRsGail];

    pub fn head(self) -> Head {
        match self {
            Variant::WRsGail => Head::Wasserstein,
            _ => Head::Js,
        }
    }

    pub fn expert_term(self) -> ExpertTerm {
        match self {
            Variant::Rail => ExpertTerm::MeanOnly,
            _ => ExpertTerm::RiskSensitive,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gail => "gail",
            Variant::Rail => "rail",
            Variant::JsRsGail => "js-rs-gail",
            Variant::WRsGail => "w-rs-gail",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}' (expected gail, rail, js-rs-gail or w-rs-gail)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyOptimizer {
    ReinforceAdam,
    KlConstrained,
}

/// Everything that defines an imitation run apart from the environment,
/// the expert data and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImitationAlgo {
    pub variant: Variant,
    pub risk: RiskConfig,
    pub entropy_weight: f64,
    pub policy_optimizer: PolicyOptimizer,
    pub generator_steps: usize,
    pub discriminator_steps: usize,
    /// Leading iterations run with `lambda = 0`.
    pub pretrain_iters: usize,
    /// Agent trajectories sampled per generator step.
    pub batch_size: usize,
    /// Subtract the batch mean loss in the expectation term.
    pub baseline: bool,
    pub policy_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub policy_lr: f64,
    pub disc_lr: f64,
    /// Wasserstein critic weights are clipped to `[-clip_bound, clip_bound]`.
    pub clip_bound: f64,
    pub kl: KlStepConfig,
    /// Fixed linear view of the observation seen by the policy (not by the
    /// discriminator); `None` shows the full observation.
    pub policy_view: Option<Vec<Vec<f64>>>,
}

impl ImitationAlgo {
    /// Defaults: 2x32 tanh networks (64-64-32 for the Wasserstein critic),
    /// three generator steps per discriminator step for GAIL, one otherwise.
    pub fn new(variant: Variant, risk: RiskConfig) -> Self {
        Self {
            variant,
            risk,
            entropy_weight: 1e-3,
            policy_optimizer: PolicyOptimizer::KlConstrained,
            generator_steps: if variant == Variant::Gail { 3 } else { 1 },
            discriminator_steps: 1,
            pretrain_iters: 0,
            batch_size: 50,
            baseline: true,
            policy_hidden: vec![32, 32],
            disc_hidden: if variant == Variant::WRsGail { vec![64, 64, 32] } else { vec![32, 32] },
            policy_lr: 1e-3,
            disc_lr: 1e-3,
            clip_bound: 0.05,
            kl: KlStepConfig::default(),
            policy_view: None,
        }
    }

    /// The lambda actually optimized at `iteration`: zero for GAIL and during pre-training.
    pub fn effective_lambda(&self, iteration: usize) -> f64 {
        if self.variant == Variant::Gail || iteration < self.pretrain_iters {
            0.0
        } else {
            self.risk.lambda
        }
    }

    pub fn validate(&self) -> Result<()> {
        RiskConfig::new(self.risk.alpha, self.risk.lambda, self.risk.gamma)?;
        let checks = [
            (self.generator_steps >= 1, "generator_steps must be at least 1"),
            (self.discriminator_steps >= 1, "discriminator_steps must be at least 1"),
            (self.batch_size >= 1, "batch_size must be at least 1"),
            (self.entropy_weight.is_finite() && self.entropy_weight >= 0.0, "entropy_weight must be non-negative"),
            (self.policy_lr > 0.0 && self.disc_lr > 0.0, "learning rates must be positive"),
            (self.clip_bound > 0.0, "clip_bound must be positive"),
            (self.kl.max_kl > 0.0, "kl.max_kl must be positive"),
            (self.kl.backtrack > 0.0 && self.kl.backtrack < 1.0, "kl.backtrack must lie in (0, 1)"),
            (self.kl.damping >= 0.0, "kl.damping must be non-negative"),
            (
                self.policy_view.as_ref().is_none_or(|v| !v.is_empty() && v.iter().all(|r| !r.is_empty() && r.len() == v[0].len())),
                "policy_view needs at least one row, all of the same non-zero width",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, message)) => Err(Error::Config((*message).into())),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("trpo".parse::<Variant>().is_err());
    }

    #[test]
    fn defaults_follow_variant() {
        let risk = RiskConfig::new(0.3, 0.5, 0.99).unwrap();
        let gail = ImitationAlgo::new(Variant::Gail, risk);
        assert_eq!((gail.discriminator_steps, gail.generator_steps), (1, 3));
        assert_eq!(gail.effective_lambda(10), 0.0);
        let w = ImitationAlgo::new(Variant::WRsGail, risk);
        assert_eq!(w.disc_hidden, vec![64, 64, 32]);
        let mut js = ImitationAlgo::new(Variant::JsRsGail, risk);
        js.pretrain_iters = 5;
        assert_eq!((js.effective_lambda(4), js.effective_lambda(5)), (0.0, 0.5));
        js.validate().unwrap();
        js.generator_steps = 0;
        assert!(js.validate().is_err());
    }
}
