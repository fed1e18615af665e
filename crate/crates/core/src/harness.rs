//! Policy evaluation, multi-seed aggregation and report files.
//!
//! Lower is better for every criterion (costs, not rewards).

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{rollout_batch, Environment, Trajectory};
use crate::error::{Error, Result};
use crate::imitation::IterationMetrics;
use crate::policy::Policy;
use crate::risk::{summarize, LossBatch, RiskConfig, RiskSummary};
use crate::rng::derive_seed;

/// Trajectories per evaluation unless configured otherwise.
pub const DEFAULT_EVAL_TRAJECTORIES: usize = 300;

/// Rolls out `n_traj` trajectories and summarizes their discounted costs.
pub fn evaluate_policy<E, P>(policy: &P, env: &E, n_traj: usize, cfg: &RiskConfig, seed: u64) -> Result<RiskSummary>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    let min = (2.0 / cfg.alpha).ceil() as usize;
    if n_traj < min {
        return Err(Error::Invalid(format!("{n_traj} trajectories cannot resolve an alpha = {} tail; need at least {min}", cfg.alpha)));
    }
    let trajs = rollout_batch(env, policy, n_traj, seed)?;
    Ok(summarize(&LossBatch::uniform(trajs.iter().map(Trajectory::loss).collect())?, cfg)?)
}

/// Mean over `batches` independent batches of the per-batch risk summary.
///
/// This mirrors how a training log scores an iteration, so a reference
/// computed this way shares the small-batch bias of the tail estimates.
pub fn evaluate_batched<E, P>(policy: &P, env: &E, batch_size: usize, batches: usize, cfg: &RiskConfig, seed: u64) -> Result<RiskSummary>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    if batches == 0 {
        return Err(Error::Invalid("at least one batch is needed".into()));
    }
    let mut total = [0.0; 4];
    for b in 0..batches {
        let trajs = rollout_batch(env, policy, batch_size, derive_seed(seed, b as u64))?;
        let s = summarize(&LossBatch::uniform(trajs.iter().map(Trajectory::loss).collect())?, cfg)?;
        for (t, v) in total.iter_mut().zip([s.mean, s.var_alpha, s.cvar_alpha, s.rho_lambda]) {
            *t += v;
        }
    }
    let n = batches as f64;
    Ok(RiskSummary { mean: total[0] / n, var_alpha: total[1] / n, cvar_alpha: total[2] / n, rho_lambda: total[3] / n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Mean,
    VarAlpha,
    CvarAlpha,
    RhoLambda,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::Mean, Criterion::VarAlpha, Criterion::CvarAlpha, Criterion::RhoLambda];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Mean => "mean",
            Criterion::VarAlpha => "var_alpha",
            Criterion::CvarAlpha => "cvar_alpha",
            Criterion::RhoLambda => "rho_lambda",
        }
    }

    pub fn of(self, s: &RiskSummary) -> f64 {
        match self {
            Criterion::Mean => s.mean,
            Criterion::VarAlpha => s.var_alpha,
            Criterion::CvarAlpha => s.cvar_alpha,
            Criterion::RhoLambda => s.rho_lambda,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| Error::Invalid(format!("unknown criterion '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Average of the final `k` iterations.
    LastK,
    /// Average of the `m` lowest values among the final `k`, per criterion.
    TopMOfLastK,
}

/// Per-iteration statistics of one `(algo, seed)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algo: String,
    pub seed: u64,
    pub stats: Vec<RiskSummary>,
}

impl RunRecord {
    pub fn from_log(algo: &str, seed: u64, log: &[IterationMetrics]) -> Self {
        let stats = log
            .iter()
            .map(|m| RiskSummary { mean: m.mean, var_alpha: m.var_alpha, cvar_alpha: m.cvar_alpha, rho_lambda: m.rho_lambda })
            .collect();
        Self { algo: algo.to_string(), seed, stats }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub algo: String,
    pub criterion: Criterion,
    pub estimate: f64,
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: AggregationMode,
    pub k: usize,
    pub m: usize,
    pub rows: Vec<ReportRow>,
}

/// Per-run value of one criterion under the aggregation mode.
pub fn run_value(stats: &[RiskSummary], criterion: Criterion, mode: AggregationMode, k: usize, m: usize) -> Result<f64> {
    if k == 0 || k > stats.len() {
        return Err(Error::Invalid(format!("k = {k} but the run has {} iterations", stats.len())));
    }
    let mut values: Vec<f64> = stats[stats.len() - k..].iter().map(|s| criterion.of(s)).collect();
    let take = match mode {
        AggregationMode::LastK => k,
        AggregationMode::TopMOfLastK => {
            if m == 0 || m > k {
                return Err(Error::Invalid(format!("m = {m} must lie in 1..={k}")));
            }
            values.sort_by(f64::total_cmp);
            m
        }
    };
    Ok(values[..take].iter().sum::<f64>() / take as f64)
}

/// Mean over runs and the half-width `1.96 sd / sqrt(n)` with the sample sd.
pub fn mean_and_halfwidth(values: &[f64]) -> (f64, f64) {
    // summing in sorted order makes the result independent of run order
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    if sorted.len() < 2 {
        return (mean, 0.0);
    }
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Aggregates per-seed runs into one row per `(algo, criterion)`, with
/// algorithms in name order. Selection happens within each seed before
/// averaging over seeds.
pub fn aggregate(runs: &[RunRecord], mode: AggregationMode, k: usize, m: usize) -> Result<EvaluationReport> {
    let mut algos: Vec<&str> = runs.iter().map(|r| r.algo.as_str()).collect();
    algos.sort_unstable();
    algos.dedup();
    let mut rows = Vec::new();
    for algo in algos {
        for criterion in Criterion::ALL {
            let values = runs
                .iter()
                .filter(|r| r.algo == algo)
                .map(|r| run_value(&r.stats, criterion, mode, k, m))
                .collect::<Result<Vec<f64>>>()?;
            let (estimate, ci_halfwidth) = mean_and_halfwidth(&values);
            rows.push(ReportRow { algo: algo.to_string(), criterion, estimate, ci_halfwidth });
        }
    }
    Ok(EvaluationReport { mode, k, m, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// JSON report file: the report plus the resolved configuration and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: serde_json::Value,
    pub seed: u64,
    #[serde(flatten)]
    pub report: EvaluationReport,
}

/// Writes `algo,criterion,estimate,ci_halfwidth` rows. The JSON form also
/// carries `config` and `seed`.
pub fn emit_report(report: &EvaluationReport, format: ReportFormat, path: &Path, config: &serde_json::Value, seed: u64) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(|e| csv_error(path, e))?;
            writer.write_record(["algo", "criterion", "estimate", "ci_halfwidth"]).map_err(|e| csv_error(path, e))?;
            for row in &report.rows {
                writer
                    .write_record([row.algo.clone(), row.criterion.to_string(), row.estimate.to_string(), row.ci_halfwidth.to_string()])
                    .map_err(|e| csv_error(path, e))?;
            }
            writer.flush().map_err(|e| Error::io(path, e))
        }
        ReportFormat::Json => {
            let file = ReportFile { config: config.clone(), seed, report: report.clone() };
            let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Invalid(e.to_string()))?;
            fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format { path: path.into(), message: e.to_string() }
}

/// Reads back the rows of a CSV report.
pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = |i: usize| record.get(i).ok_or_else(|| Error::Format { path: path.into(), message: format!("missing column {i}") });
        let number = |i: usize| -> Result<f64> {
            field(i)?.parse().map_err(|e| Error::Format { path: path.into(), message: format!("bad number: {e}") })
        };
        rows.push(ReportRow { algo: field(0)?.to_string(), criterion: field(1)?.parse()?, estimate: number(2)?, ci_halfwidth: number(3)? });
    }
    Ok(rows)
}

pub fn read_report_json(path: &Path) -> Result<ReportFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Parse { path: path.into(), line: 1, source })
}

/// Plot-ready `iteration,criterion,value` rows for one run.
pub fn write_curves(path: &Path, stats: &[RiskSummary]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(|e| csv_error(path, e))?;
    writer.write_record(["iteration", "criterion", "value"]).map_err(|e| csv_error(path, e))?;
    for (i, s) in stats.iter().enumerate() {
        for c in Criterion::ALL {
            writer.write_record([i.to_string(), c.to_string(), c.of(s).to_string()]).map_err(|e| csv_error(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// First line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub algo: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

/// Writes a JSON-lines training log: the header, then one line per iteration.
pub fn write_training_log(path: &Path, header: &LogHeader, log: &[IterationMetrics]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut line = |value: String| writeln!(out, "{value}").map_err(|e| Error::io(path, e));
    line(serde_json::to_string(header).map_err(|e| Error::Invalid(e.to_string()))?)?;
    for m in log {
        line(serde_json::to_string(m).map_err(|e| Error::Invalid(e.to_string()))?)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_training_log(path: &Path) -> Result<(LogHeader, Vec<IterationMetrics>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::Format { path: path.into(), message: "empty training log".into() })?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let header = serde_json::from_str(&first).map_err(|source| Error::Parse { path: path.into(), line: 1, source })?;
    let mut log = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        log.push(serde_json::from_str(&line).map_err(|source| Error::Parse { path: path.into(), line: i + 1, source })?);
    }
    Ok((header, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TabularMdp;

    fn summary(v: f64) -> RiskSummary {
        RiskSummary { mean: v, var_alpha: 2.0 * v, cvar_alpha: 3.0 * v, rho_lambda: -v }
    }

    #[test]
    fn deterministic_env_has_degenerate_statistics() {
        let mdp = TabularMdp::with_costs("one", vec![vec![vec![1.0]]], vec![vec![2.0]], vec![1.0], 2, 0.5).unwrap();
        let cfg = RiskConfig::new(0.3, 0.5, 0.5).unwrap();
        let s = evaluate_policy(&|_: &[f64]| vec![1.0], &mdp, 300, &cfg, 1).unwrap();
        assert_eq!((s.mean, s.var_alpha, s.cvar_alpha, s.rho_lambda), (3.0, 3.0, 3.0, 3.0));
        assert!(evaluate_policy(&|_: &[f64]| vec![1.0], &mdp, 6, &cfg, 1).is_err());
    }

    #[test]
    fn last_one_is_the_final_iteration() {
        let stats: Vec<RiskSummary> = (0..5).map(|i| summary(i as f64)).collect();
        for c in Criterion::ALL {
            assert_eq!(run_value(&stats, c, AggregationMode::LastK, 1, 1).unwrap(), c.of(&stats[4]));
        }
    }

    #[test]
    fn top_m_equals_last_k_when_m_is_k() {
        let stats: Vec<RiskSummary> = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6].iter().map(|&v| summary(v)).collect();
        for c in Criterion::ALL {
            let a = run_value(&stats, c, AggregationMode::LastK, 4, 4).unwrap();
            let b = run_value(&stats, c, AggregationMode::TopMOfLastK, 4, 4).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn top_m_matches_exhaustive_sort() {
        let values = [5.0, 0.5, 7.0, 2.0, 3.0, 1.0, 6.0];
        let stats: Vec<RiskSummary> = values.iter().map(|&v| summary(v)).collect();
        // last 5 are 7, 2, 3, 1, 6; the two lowest are 1 and 2
        assert_eq!(run_value(&stats, Criterion::Mean, AggregationMode::TopMOfLastK, 5, 2).unwrap(), 1.5);
        // rho is -v, so its two lowest are -7 and -6
        assert_eq!(run_value(&stats, Criterion::RhoLambda, AggregationMode::TopMOfLastK, 5, 2).unwrap(), -6.5);
        assert!(run_value(&stats, Criterion::Mean, AggregationMode::TopMOfLastK, 8, 2).is_err());
        assert!(run_value(&stats, Criterion::Mean, AggregationMode::TopMOfLastK, 5, 6).is_err());
    }

    #[test]
    fn halfwidth_formula() {
        let (mean, hw) = mean_and_halfwidth(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((hw - 1.96 * sd / 2.0).abs() < 1e-15);
        assert_eq!(mean_and_halfwidth(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn empty_report_is_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let report = EvaluationReport { mode: AggregationMode::LastK, k: 1, m: 1, rows: Vec::new() };
        emit_report(&report, ReportFormat::Csv, &path, &serde_json::Value::Null, 0).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "algo,criterion,estimate,ci_halfwidth\n");
    }
}
