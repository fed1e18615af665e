//! Aggregates training logs into a report with 95% intervals and writes it
//! as CSV and JSON.

use riskimit::env::rollout_batch;
use riskimit::expert::exact_tabular_expert;
use riskimit::fixtures::{gridworld, GridSpec};
use riskimit::harness::{aggregate, emit_report, AggregationMode, ReportFormat, RunRecord};
use riskimit::imitation::{train, ImitationAlgo, Variant};
use riskimit::risk::RiskConfig;

fn main() -> anyhow::Result<()> {
    // small enough for exhaustive policy search
    let mdp = gridworld(&GridSpec { layout: vec!["...".into(), "SRG".into()], horizon: 6, ..GridSpec::default() });
    let cfg = RiskConfig::new(0.3, 0.5, 0.99)?;
    let (expert, _) = exact_tabular_expert(&mdp, &cfg)?;
    let demos = rollout_batch(&mdp, &expert, 100, 1)?;
    let mut runs = Vec::new();
    for variant in [Variant::Gail, Variant::JsRsGail] {
        let algo = ImitationAlgo { batch_size: 30, ..ImitationAlgo::new(variant, cfg) };
        for seed in 0..3 {
            let outcome = train(&algo, &mdp, &demos, 30, seed)?;
            runs.push(RunRecord::from_log(variant.name(), seed, &outcome.log));
        }
    }
    let report = aggregate(&runs, AggregationMode::TopMOfLastK, 10, 3)?;
    for row in &report.rows {
        println!("{:<11} {:<10} {:>8.3} +- {:.3}", row.algo, row.criterion, row.estimate, row.ci_halfwidth);
    }
    let dir = std::env::temp_dir();
    emit_report(&report, ReportFormat::Csv, &dir.join("riskimit-report.csv"), &serde_json::json!({}), 0)?;
    emit_report(&report, ReportFormat::Json, &dir.join("riskimit-report.json"), &serde_json::json!({}), 0)?;
    println!("wrote {}", dir.join("riskimit-report.{csv,json}").display());
    Ok(())
}
