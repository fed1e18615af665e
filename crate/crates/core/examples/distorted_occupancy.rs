//! On the risky gridworld, the expected cost under the risk-distorted
//! occupancy measure equals the mean/CVaR blend of the trajectory loss.

use riskimit::env::enumerate_trajectories;
use riskimit::fixtures::{gridworld, GridSpec};
use riskimit::policy::TabularPolicy;
use riskimit::risk::{distorted_occupancy, rho_lambda, LossBatch, RiskConfig};

fn main() -> anyhow::Result<()> {
    let spec = GridSpec { horizon: 4, ..GridSpec::default() };
    let mdp = gridworld(&spec);
    let policy = TabularPolicy::uniform(mdp.state_count(), mdp.action_count());
    let trajs = enumerate_trajectories(&mdp, &policy)?;
    let batch = LossBatch::weighted(trajs.iter().map(|t| t.trajectory.loss()).collect(), trajs.iter().map(|t| t.probability).collect())?;
    println!("{} trajectories enumerated", trajs.len());
    for lambda in [0.0, 0.5, 2.0] {
        let cfg = RiskConfig::new(0.3, lambda, spec.gamma)?;
        let d = distorted_occupancy(&mdp, &policy, &cfg)?;
        let rho = rho_lambda(&batch, &cfg)?;
        println!(
            "lambda {lambda}: distorted cost {:.10} rho {:.10} |diff| {:.1e} mass {:.6}",
            d.expected_cost(&mdp),
            rho,
            (d.expected_cost(&mdp) - rho).abs(),
            d.total_mass()
        );
    }
    Ok(())
}
