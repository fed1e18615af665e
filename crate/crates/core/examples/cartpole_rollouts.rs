//! Rollouts of a hand-written balancing rule on the noisy cart-pole and of
//! random torques on the noisy pendulum.

use riskimit::env::{rollout_batch, CartPole, Environment, Pendulum};
use riskimit::harness::evaluate_policy;
use riskimit::risk::RiskConfig;

fn main() -> anyhow::Result<()> {
    let cartpole = CartPole::new(200, 0.99)?;
    // push towards the side the pole is falling to
    let balance = |obs: &[f64]| if obs[2] + 0.5 * obs[3] > 0.0 { vec![0.0, 1.0] } else { vec![1.0, 0.0] };
    let trajs = rollout_batch(&cartpole, &balance, 100, 1)?;
    let lengths: Vec<usize> = trajs.iter().map(|t| t.costs.iter().filter(|&&c| c != 0.0).count()).collect();
    println!("cartpole: mean survival {:.1} of {} steps", lengths.iter().sum::<usize>() as f64 / 100.0, cartpole.spec().horizon);

    let cfg = RiskConfig::new(0.3, 0.5, 0.99)?;
    let stats = evaluate_policy(&balance, &cartpole, 300, &cfg, 2)?;
    println!("cartpole loss: mean {:.2} cvar {:.2}", stats.mean, stats.cvar_alpha);

    let pendulum = Pendulum::new(100, 0.99)?;
    let uniform = |_: &[f64]| vec![0.2; 5];
    let stats = evaluate_policy(&uniform, &pendulum, 300, &cfg, 3)?;
    println!("pendulum loss under random torques: mean {:.2} var {:.2} cvar {:.2}", stats.mean, stats.var_alpha, stats.cvar_alpha);
    Ok(())
}
