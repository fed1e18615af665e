use std::path::Path;
use std::process::{Command, Output};

fn riskimit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskimit")).current_dir(dir).env_remove("RISKIMIT_SEED").args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn verify_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "verify",
        "--verify.batches",
        "50",
        "--verify.gradient_fixtures",
        "5",
        "--verify.unbiasedness_samples",
        "20000",
        "--verify.occupancy_policies",
        "2",
        "--verify.collapse_iterations",
        "3",
        "--verify.clipping_iterations",
        "3",
    ];
    let ok = riskimit(dir.path(), &small);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS ")).count() >= 7, "{stdout}");

    // no finite-difference check can meet a zero tolerance
    let mut tight = small.to_vec();
    tight.extend(["--verify.gradient_tol", "0"]);
    let failed = riskimit(dir.path(), &tight);
    assert_eq!(failed.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&failed.stdout).contains("FAIL gradient checks"));
}

#[test]
fn unknown_configuration_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[risk]\nalpah = 0.2\n").unwrap();
    let out = riskimit(dir.path(), &["train", "-c", "c.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("alpah"), "{}", stderr(&out));

    let out = riskimit(dir.path(), &["train", "--risk.alpah", "0.2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_inputs_name_the_producing_command() {
    let dir = tempfile::tempdir().unwrap();
    for (command, producer) in [("gen-dataset", "train-expert"), ("train", "gen-dataset"), ("evaluate", "train"), ("report", "train")] {
        let out = riskimit(dir.path(), &[command]);
        assert_eq!(out.status.code(), Some(1), "{command}");
        assert!(stderr(&out).contains(&format!("run `{producer}` first")), "{command}: {}", stderr(&out));
    }
}

#[test]
fn seed_comes_from_the_environment_unless_given() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_riskimit"))
            .current_dir(dir.path())
            .env("RISKIMIT_SEED", "77")
            .args(["report"].iter().chain(extra))
            .output()
            .unwrap();
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    assert!(run(&[]).contains("seed = 77"));
    assert!(run(&["--run.seed", "5"]).contains("seed = 5"));
    assert_eq!(riskimit(dir.path(), &["report", "--run.seed", "-1"]).status.code(), Some(1));
}

#[test]
fn column_view_is_gridworld_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = riskimit(dir.path(), &["train", "--env.name", "cartpole", "--algo.policy_view", "column"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("needs the gridworld"), "{}", stderr(&out));
}
