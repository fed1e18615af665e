//! Clusters expert state-action pairs and shows how the cost multiplier
//! grows in regions the expert rarely visits.

use riskimit::costnoise::{fit_kmeans, noise_scale, state_action_pairs, NoiseStyle, NoisyCostEnv};
use riskimit::env::{rollout_batch, CartPole, Environment};
use riskimit::harness::evaluate_policy;
use riskimit::risk::RiskConfig;
use riskimit::rng::seeded;

fn main() -> anyhow::Result<()> {
    let env = CartPole::new(100, 0.99)?;
    let balance = |obs: &[f64]| if obs[2] + 0.5 * obs[3] > 0.0 { vec![0.05, 0.95] } else { vec![0.95, 0.05] };
    let demos = rollout_batch(&env, &balance, 50, 1)?;
    let model = fit_kmeans(&state_action_pairs(&demos), env.spec().action_count, 15, &mut seeded(2), 100)?;
    let mut weights = model.weights.clone();
    weights.sort_by(f64::total_cmp);
    for w in [weights[0], weights[weights.len() / 2], weights[weights.len() - 1]] {
        println!("cluster weight {w:.3}: hopper-style scale {:.2}, walker-style scale {:.2}", noise_scale(w, NoiseStyle::HopperStyle), noise_scale(w, NoiseStyle::WalkerStyle));
    }
    let noisy = NoisyCostEnv::new(env.clone(), model, NoiseStyle::HopperStyle)?;
    let cfg = RiskConfig::new(0.3, 0.5, 0.99)?;
    let random = |_: &[f64]| vec![0.5, 0.5];
    for (name, stats) in [
        ("balancer, plain", evaluate_policy(&balance, &env, 300, &cfg, 3)?),
        ("balancer, noisy", evaluate_policy(&balance, &noisy, 300, &cfg, 3)?),
        ("random,   plain", evaluate_policy(&random, &env, 300, &cfg, 3)?),
        ("random,   noisy", evaluate_policy(&random, &noisy, 300, &cfg, 3)?),
    ] {
        println!("{name}: mean {:+.2} cvar {:+.2}", stats.mean, stats.cvar_alpha);
    }
    Ok(())
}
