//! Discriminator-induced trajectory losses and the discriminator gradients.

use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::error::Result;
use crate::nn::{Mlp, NnError};
use crate::risk::{cvar_dual_oracle, scaled_rho_lambda, LossBatch, RiskConfig};

/// Discriminator values are clamped to `[F_CLAMP, 1 - F_CLAMP]` before the log.
pub const F_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Sigmoid output in (0, 1).
    Js,
    /// Unbounded identity output, Lipschitz-constrained by clipping.
    Wasserstein,
}

/// How the expert term of the JS discriminator objective is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpertTerm {
    /// `rho_alpha^lambda` of the expert loss, as for the agent.
    RiskSensitive,
    /// Expert mean only, scaled by `1 + lambda`.
    MeanOnly,
}

/// Per-trajectory surrogate losses and their gradients in the discriminator
/// parameters. A `Js` head fills `f1`/`f2`; a `Wasserstein` head fills `cf`.
#[derive(Debug, Clone, Default)]
pub struct SurrogateLosses {
    /// `sum_t gamma^t log f(s_t, a_t)`
    pub f1: Vec<f64>,
    /// `sum_t gamma^t log(1 - f(s_t, a_t))`
    pub f2: Vec<f64>,
    /// `sum_t gamma^t f(s_t, a_t)`
    pub cf: Vec<f64>,
    pub grad_f1: Vec<Vec<f64>>,
    pub grad_f2: Vec<Vec<f64>>,
    pub grad_cf: Vec<Vec<f64>>,
}

impl SurrogateLosses {
    pub fn len(&self) -> usize {
        self.f1.len().max(self.cf.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Discriminator input for a state and a discrete action: the state followed
/// by the one-hot action.
pub fn disc_input(state: &[f64], action: usize, action_count: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(state.len() + action_count);
    x.extend_from_slice(state);
    x.extend((0..action_count).map(|a| if a == action { 1.0 } else { 0.0 }));
    x
}

fn action_count(disc: &Mlp, traj: &Trajectory) -> std::result::Result<usize, NnError> {
    let obs = traj.states.first().map_or(0, Vec::len);
    disc.input_dim()
        .checked_sub(obs)
        .filter(|&a| a > 0)
        .ok_or(NnError::Dimension { expected: disc.input_dim(), got: obs })
}

/// Surrogate losses with per-trajectory gradient rows.
pub fn surrogate_losses(disc: &Mlp, trajs: &[Trajectory], head: Head) -> Result<SurrogateLosses> {
    evaluate(disc, trajs, head, true)
}

/// Surrogate losses without gradients.
pub fn surrogate_values(disc: &Mlp, trajs: &[Trajectory], head: Head) -> Result<SurrogateLosses> {
    evaluate(disc, trajs, head, false)
}

fn evaluate(disc: &Mlp, trajs: &[Trajectory], head: Head, with_grads: bool) -> Result<SurrogateLosses> {
    let mut out = SurrogateLosses::default();
    let p = disc.param_count();
    for traj in trajs {
        let actions = action_count(disc, traj)?;
        let mut discount = 1.0;
        let (mut a, mut b) = (0.0, 0.0);
        let (mut ga, mut gb) = if with_grads { (vec![0.0; p], vec![0.0; p]) } else { (Vec::new(), Vec::new()) };
        for t in 0..traj.live_steps {
            let trace = disc.forward_trace(&disc_input(&traj.states[t], traj.actions[t], actions))?;
            let f = trace.output()[0];
            match head {
                Head::Js => {
                    let clamped = f.clamp(F_CLAMP, 1.0 - F_CLAMP);
                    a += discount * clamped.ln();
                    b += discount * (1.0 - clamped).ln();
                    if with_grads && clamped == f {
                        // d log(sigmoid z)/dz = 1 - f and d log(1 - sigmoid z)/dz = -f
                        disc.accumulate_backward_logits(&trace, &[1.0 - f], discount, &mut ga)?;
                        disc.accumulate_backward_logits(&trace, &[-f], discount, &mut gb)?;
                    }
                }
                Head::Wasserstein => {
                    a += discount * f;
                    if with_grads {
                        disc.accumulate_backward(&trace, &[1.0], discount, &mut ga)?;
                    }
                }
            }
            discount *= traj.gamma;
        }
        match head {
            Head::Js => {
                out.f1.push(a);
                out.f2.push(b);
                if with_grads {
                    out.grad_f1.push(ga);
                    out.grad_f2.push(gb);
                }
            }
            Head::Wasserstein => {
                out.cf.push(a);
                if with_grads {
                    out.grad_cf.push(ga);
                }
            }
        }
    }
    Ok(out)
}

/// Per-trajectory coefficients `(1 + lambda * zeta_i) / N` of the gradient
/// of `E[X] + lambda * CVaR_alpha[X]` for a uniform batch of losses `X`.
///
/// `zeta` is the maximizing risk-envelope density, so a tied boundary atom
/// receives exactly its fractional share of the tail.
pub fn scaled_rho_weights(losses: &[f64], cfg: &RiskConfig) -> Result<Vec<f64>> {
    let n = losses.len() as f64;
    let batch = LossBatch::uniform(losses.to_vec())?;
    if (n * cfg.alpha) < 1.0 {
        log::debug!("batch of {} trajectories cannot resolve an alpha = {} tail", losses.len(), cfg.alpha);
    }
    let (_, density) = cvar_dual_oracle(&batch, cfg.alpha)?;
    Ok(density.zeta.iter().map(|z| (1.0 + cfg.lambda * z) / n).collect())
}

fn accumulate(grad: &mut [f64], rows: &[Vec<f64>], weights: &[f64], sign: f64) {
    for (row, w) in rows.iter().zip(weights) {
        let scale = sign * w;
        grad.iter_mut().zip(row).for_each(|(g, r)| *g += scale * r);
    }
}

fn check_batches(agent: &[f64], expert: &[f64]) -> Result<()> {
    if agent.is_empty() || expert.is_empty() {
        return Err(crate::Error::Invalid("discriminator gradient needs nonempty agent and expert batches".into()));
    }
    Ok(())
}

/// Ascent gradient of `(1+lambda)(rho[F1 agent] - rho[-F2 expert])`, or of
/// `(1+lambda)(rho[F1 agent] + E[F2 expert])` for the mean-only expert term.
pub fn discriminator_gradient_js(agent: &SurrogateLosses, expert: &SurrogateLosses, cfg: &RiskConfig, term: ExpertTerm) -> Result<Vec<f64>> {
    check_batches(&agent.f1, &expert.f2)?;
    let p = agent.grad_f1.first().or(expert.grad_f2.first()).map_or(0, Vec::len);
    let mut grad = vec![0.0; p];
    accumulate(&mut grad, &agent.grad_f1, &scaled_rho_weights(&agent.f1, cfg)?, 1.0);
    let expert_weights = match term {
        ExpertTerm::RiskSensitive => {
            let neg: Vec<f64> = expert.f2.iter().map(|x| -x).collect();
            scaled_rho_weights(&neg, cfg)?
        }
        ExpertTerm::MeanOnly => vec![(1.0 + cfg.lambda) / expert.f2.len() as f64; expert.f2.len()],
    };
    accumulate(&mut grad, &expert.grad_f2, &expert_weights, 1.0);
    Ok(grad)
}

/// Ascent gradient of `(1+lambda)(rho[C_f agent] - rho[C_f expert])`.
pub fn discriminator_gradient_w(agent: &SurrogateLosses, expert: &SurrogateLosses, cfg: &RiskConfig) -> Result<Vec<f64>> {
    check_batches(&agent.cf, &expert.cf)?;
    let p = agent.grad_cf.first().or(expert.grad_cf.first()).map_or(0, Vec::len);
    let mut grad = vec![0.0; p];
    accumulate(&mut grad, &agent.grad_cf, &scaled_rho_weights(&agent.cf, cfg)?, 1.0);
    accumulate(&mut grad, &expert.grad_cf, &scaled_rho_weights(&expert.cf, cfg)?, -1.0);
    Ok(grad)
}

/// The discriminator objective whose ascent gradient the functions above return.
pub fn discriminator_objective(agent: &SurrogateLosses, expert: &SurrogateLosses, cfg: &RiskConfig, head: Head, term: ExpertTerm) -> Result<f64> {
    let scaled = |x: &[f64]| -> Result<f64> { Ok(scaled_rho_lambda(&LossBatch::uniform(x.to_vec())?, cfg)?) };
    match head {
        Head::Js => {
            let expert_part = match term {
                ExpertTerm::RiskSensitive => scaled(&expert.f2.iter().map(|x| -x).collect::<Vec<_>>())?,
                ExpertTerm::MeanOnly => -(1.0 + cfg.lambda) * expert.f2.iter().sum::<f64>() / expert.f2.len() as f64,
            };
            Ok(scaled(&agent.f1)? - expert_part)
        }
        Head::Wasserstein => Ok(scaled(&agent.cf)? - scaled(&expert.cf)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rng::seeded;

    fn traj(states: Vec<Vec<f64>>, actions: Vec<usize>, gamma: f64) -> Trajectory {
        let t = actions.len();
        Trajectory { states, actions, costs: vec![0.0; t], gamma, live_steps: t }
    }

    #[test]
    fn constant_half_discriminator_has_closed_form_loss() {
        // zero weights into a sigmoid head give f = 0.5 everywhere
        let disc = Mlp::zeros(vec![3, 4, 1], vec![Activation::Tanh, Activation::Sigmoid]).unwrap();
        let tr = traj(vec![vec![0.2], vec![0.4], vec![0.1], vec![0.0]], vec![0, 1, 1], 0.9);
        let s = surrogate_values(&disc, &[tr], Head::Js).unwrap();
        let expected = 0.5f64.ln() * (1.0 + 0.9 + 0.81);
        assert!((s.f1[0] - expected).abs() < 1e-15);
        assert!((s.f2[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_discount_keeps_only_the_first_step() {
        let mut rng = seeded(4);
        let disc = Mlp::with_hidden(3, &[5], 1, Activation::Sigmoid, &mut rng).unwrap();
        let tr = traj(vec![vec![0.2], vec![0.4], vec![0.1]], vec![1, 0], 0.0);
        let s = surrogate_values(&disc, std::slice::from_ref(&tr), Head::Js).unwrap();
        let f0 = disc.forward(&disc_input(&[0.2], 1, 2)).unwrap()[0];
        assert_eq!(s.f1[0], f0.ln());
    }

    #[test]
    fn padded_steps_are_ignored() {
        let mut rng = seeded(5);
        let disc = Mlp::with_hidden(3, &[4], 1, Activation::Identity, &mut rng).unwrap();
        let mut tr = traj(vec![vec![0.2], vec![0.4], vec![0.4]], vec![1, 0], 0.9);
        tr.live_steps = 1;
        let s = surrogate_values(&disc, &[tr], Head::Wasserstein).unwrap();
        assert_eq!(s.cf[0], disc.forward(&disc_input(&[0.2], 1, 2)).unwrap()[0]);
    }

    #[test]
    fn lambda_zero_js_gradient_is_the_gail_gradient() {
        let mut rng = seeded(6);
        let disc = Mlp::with_hidden(3, &[4], 1, Activation::Sigmoid, &mut rng).unwrap();
        let trajs: Vec<Trajectory> = (0..6)
            .map(|i| traj(vec![vec![0.1 * i as f64], vec![-0.3], vec![0.5]], vec![i % 2, 1], 0.95))
            .collect();
        let agent = surrogate_losses(&disc, &trajs[..4], Head::Js).unwrap();
        let expert = surrogate_losses(&disc, &trajs[4..], Head::Js).unwrap();
        let cfg = RiskConfig::new(0.3, 0.0, 0.95).unwrap();
        let got = discriminator_gradient_js(&agent, &expert, &cfg, ExpertTerm::RiskSensitive).unwrap();
        let mut want = vec![0.0; disc.param_count()];
        for row in &agent.grad_f1 {
            want.iter_mut().zip(row).for_each(|(w, r)| *w += r / 4.0);
        }
        for row in &expert.grad_f2 {
            want.iter_mut().zip(row).for_each(|(w, r)| *w += r / 2.0);
        }
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_batches_give_zero_w_gradient() {
        let mut rng = seeded(7);
        let disc = Mlp::with_hidden(3, &[4], 1, Activation::Identity, &mut rng).unwrap();
        let trajs: Vec<Trajectory> =
            (0..5).map(|i| traj(vec![vec![0.2 * i as f64], vec![0.3], vec![0.0]], vec![i % 2, 0], 0.9)).collect();
        let s = surrogate_losses(&disc, &trajs, Head::Wasserstein).unwrap();
        let cfg = RiskConfig::new(0.4, 2.0, 0.9).unwrap();
        assert!(discriminator_gradient_w(&s, &s, &cfg).unwrap().iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn alpha_one_weights_are_uniform() {
        let cfg = RiskConfig::new(1.0, 2.0, 0.9).unwrap();
        let w = scaled_rho_weights(&[3.0, -1.0, 0.5, 2.0], &cfg).unwrap();
        for x in w {
            assert!((x - 3.0 / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        let cfg = RiskConfig::new(0.5, 1.0, 0.9).unwrap();
        let empty = SurrogateLosses::default();
        assert!(discriminator_gradient_w(&empty, &empty, &cfg).is_err());
    }
}
