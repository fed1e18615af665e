//! GAIL, RAIL and JS-RS-GAIL imitating a CVaR-optimal expert on the risky
//! gridworld.

use riskimit::env::rollout_batch;
use riskimit::expert::exact_tabular_expert;
use riskimit::fixtures::{gridworld, GridSpec};
use riskimit::harness::{evaluate_policy, run_value, AggregationMode, Criterion, RunRecord};
use riskimit::imitation::{train, ImitationAlgo, Variant};
use riskimit::risk::RiskConfig;

fn main() -> anyhow::Result<()> {
    env_logger::init();
    // small enough for exhaustive policy search
    let mdp = gridworld(&GridSpec { layout: vec!["...".into(), "SRG".into()], horizon: 6, ..GridSpec::default() });
    let cfg = RiskConfig::new(0.3, 0.5, 0.99)?;
    let (expert, _) = exact_tabular_expert(&mdp, &cfg)?;
    let demos = rollout_batch(&mdp, &expert, 200, 1)?;
    let reference = evaluate_policy(&expert, &mdp, 5000, &cfg, 2)?;
    println!("expert: mean {:.3} cvar {:.3}", reference.mean, reference.cvar_alpha);
    for variant in [Variant::Gail, Variant::Rail, Variant::JsRsGail] {
        let algo = ImitationAlgo { batch_size: 40, ..ImitationAlgo::new(variant, cfg) };
        let outcome = train(&algo, &mdp, &demos, 60, 3)?;
        let stats = RunRecord::from_log(variant.name(), 3, &outcome.log).stats;
        let cvar = run_value(&stats, Criterion::CvarAlpha, AggregationMode::LastK, 20, 20)?;
        let mean = run_value(&stats, Criterion::Mean, AggregationMode::LastK, 20, 20)?;
        println!("{variant:<11} last-20 mean {mean:.3} cvar {cvar:.3}");
    }
    Ok(())
}
