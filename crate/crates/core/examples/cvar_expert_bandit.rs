//! Risk-neutral and risk-averse experts on the two-armed bandit, found by
//! exhaustive policy search and by REINFORCE on the mean/CVaR objective.

use riskimit::expert::{exact_tabular_expert, train_cvar_expert, ExpertConfig};
use riskimit::fixtures::risky_bandit;
use riskimit::policy::Policy;
use riskimit::risk::RiskConfig;

fn main() -> anyhow::Result<()> {
    let mdp = risky_bandit();
    for lambda in [0.0, 5.0] {
        let cfg = RiskConfig::new(0.3, lambda, 0.99)?;
        let (table, scaled) = exact_tabular_expert(&mdp, &cfg)?;
        let opts = ExpertConfig { hidden: vec![8], batch_size: 64, eval_every: 20, ..ExpertConfig::default() };
        let learned = train_cvar_expert(&mdp, &cfg, 200, 3, &opts)?;
        println!(
            "lambda {lambda}: exact policy {:?} ((1+lambda) rho = {scaled:.3}); reinforce picks {:?} with mean {:.3} cvar {:.3}",
            table.action_probs(&[1.0]),
            learned.policy.action_probs(&[1.0]).iter().map(|p| (p * 100.0).round() / 100.0).collect::<Vec<_>>(),
            learned.best.mean,
            learned.best.cvar_alpha
        );
    }
    Ok(())
}
