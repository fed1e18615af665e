//! One PASS/FAIL line per acceptance criterion.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! Any failure of a hard criterion makes the process exit non-zero. The
//! risk comparison between algorithms is reported but never fails the run.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use riskimit::cli::{read_artifact, Artifact, EvaluationEntry};
use riskimit::harness::{read_training_log, run_value, AggregationMode, Criterion};
use riskimit::verify::{self, SuiteReport};

const SEED: u64 = 2024;

struct Line {
    passed: bool,
    hard: bool,
    text: String,
}

fn suite(report: SuiteReport, limit_seconds: Option<f64>) -> Line {
    let in_time = limit_seconds.is_none_or(|limit| report.seconds < limit);
    let mut text = report.line();
    if let Some(limit) = limit_seconds {
        text.push_str(&format!(" [limit {limit:.0}s]"));
    }
    if report.passed && !in_time {
        text = text.replacen("PASS", "FAIL", 1);
    }
    Line { passed: report.passed && in_time, hard: true, text }
}

fn riskimit(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_riskimit"))
        .current_dir(dir)
        .env_remove("RISKIMIT_SEED")
        .args(args)
        .output()
        .expect("riskimit runs");
    assert!(out.status.success(), "riskimit {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/noisy_gridworld.toml")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

const ALGOS: [&str; 3] = ["gail", "rail", "js-rs-gail"];

fn directional() -> Line {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config_path();
    let c = cfg.to_str().unwrap();
    riskimit(d, &["train-expert", "-c", c, "--risk.lambda", "0", "--run.expert_path", "out/neutral.json"]);
    riskimit(d, &["gen-dataset", "-c", c, "--run.expert_path", "out/neutral.json", "--run.dataset_path", "out/neutral.jsonl"]);
    riskimit(d, &["fit-noise", "-c", c, "--run.dataset_path", "out/neutral.jsonl"]);
    riskimit(d, &["train-expert", "-c", c, "--env.noise", "true"]);
    riskimit(d, &["gen-dataset", "-c", c, "--env.noise", "true"]);
    for algo in ALGOS {
        riskimit(d, &["train", "-c", c, "--env.noise", "true", "--algo", algo]);
    }
    riskimit(d, &["evaluate", "-c", c, "--env.noise", "true", "--algo", "gail"]);

    let evaluation: Artifact<Vec<EvaluationEntry>> = read_artifact(&d.join("out/evaluation-gail.json"), "evaluate").unwrap();
    let expert = evaluation.payload.iter().find(|e| e.run == "expert-batched").expect("batched expert reference").stats.cvar_alpha;
    let mut gaps = Vec::new();
    for algo in ALGOS {
        let per_seed: Vec<f64> = (0..5)
            .map(|k| {
                let (_, log) = read_training_log(&d.join(format!("out/train/{algo}-seed{k}.jsonl"))).unwrap();
                let stats: Vec<_> = riskimit::harness::RunRecord::from_log(algo, 0, &log).stats;
                let cvar = run_value(&stats, Criterion::CvarAlpha, AggregationMode::LastK, 100, 100).unwrap();
                (cvar - expert).abs()
            })
            .collect();
        gaps.push(per_seed);
    }
    let medians: Vec<f64> = gaps.iter().map(|g| median(g.clone())).collect();
    let wins = gaps[2].iter().zip(&gaps[0]).filter(|(js, gail)| js < gail).count();
    let seconds = start.elapsed().as_secs_f64();
    let passed = medians[2] <= medians[1] && medians[1] <= medians[0] && wins >= 4 && seconds <= 1800.0;
    let text = format!(
        "{} risk comparison (soft): expert CVaR {expert:.3}; median |CVaR gap| GAIL {:.3}, RAIL {:.3}, JS-RS-GAIL {:.3}; \
         JS-RS-GAIL beats GAIL in {wins}/5 seeds ({seconds:.0}s)",
        if passed { "PASS" } else { "FAIL" },
        medians[0],
        medians[1],
        medians[2],
    );
    Line { passed, hard: false, text }
}

fn determinism() -> Line {
    let start = Instant::now();
    let cfg = config_path();
    let c = cfg.to_str().unwrap();
    let small = ["--env.horizon", "8", "--run.iterations", "20", "--run.num_seeds", "2", "--expert.iterations", "20", "--expert.dataset_size", "50"];
    let mut logs = Vec::new();
    for threads in ["1", "4"] {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let with = |args: &[&str]| -> Vec<String> {
            args.iter().chain(small.iter()).chain(["--threads", threads].iter()).map(|s| s.to_string()).collect()
        };
        for args in [
            with(&["train-expert", "-c", c]),
            with(&["gen-dataset", "-c", c]),
            with(&["fit-noise", "-c", c]),
            with(&["train", "-c", c, "--algo", "js-rs-gail", "--env.noise", "true"]),
        ] {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            riskimit(d, &args);
        }
        let mut files = Vec::new();
        for name in ["out/expert.json", "out/expert_data.jsonl", "out/noise.json", "out/train/js-rs-gail-seed0.jsonl", "out/train/js-rs-gail-seed1.jsonl"] {
            files.push((name, std::fs::read(d.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))));
        }
        logs.push(files);
    }
    let differing: Vec<&str> = logs[0].iter().zip(&logs[1]).filter(|(a, b)| a.1 != b.1).map(|(a, _)| a.0).collect();
    let passed = differing.is_empty();
    let text = format!(
        "{} determinism: {} artifacts byte-identical across --threads 1 and 4{} ({:.2}s)",
        if passed { "PASS" } else { "FAIL" },
        logs[0].len(),
        if passed { String::new() } else { format!("; differing: {differing:?}") },
        start.elapsed().as_secs_f64()
    );
    Line { passed, hard: true, text }
}

fn main() {
    // `cargo test -- --list` and filters from other targets must not start the heavy run
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let lines = vec![
        suite(verify::risk_oracle_suite(1000, SEED, 1e-9).unwrap(), Some(10.0)),
        suite(verify::coherence_suite(1000, SEED, 1e-10).unwrap(), None),
        suite(verify::gradient_suite(100, SEED, 1e-4).unwrap(), Some(60.0)),
        suite(verify::unbiasedness_suite(1_000_000, SEED).unwrap(), Some(300.0)),
        suite(verify::collapse_suite(50, SEED, 1e-12).unwrap(), None),
        suite(verify::occupancy_suite(20, SEED, 1e-8).unwrap(), None),
        suite(verify::clipping_suite(300, SEED).unwrap(), None),
        directional(),
        determinism(),
    ];
    for line in &lines {
        println!("{}", line.text);
    }
    let hard_failures = lines.iter().filter(|l| l.hard && !l.passed).count();
    println!("acceptance: {}/{} criteria passed", lines.iter().filter(|l| l.passed).count(), lines.len());
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
