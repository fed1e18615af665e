//! Frozen trajectories of the control tasks, produced once by an independent
//! implementation of the textbook equations.

use riskimit::env::{CartPole, Environment, Pendulum};
use riskimit::rng::seeded;
use serde::Deserialize;

#[derive(Deserialize)]
struct CartPoleGolden {
    seed: u64,
    initial_state: Vec<f64>,
    actions: Vec<usize>,
    forces: Vec<f64>,
    states: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct PendulumCase {
    seed: u64,
    action: usize,
    torque: f64,
    next_state: Vec<f64>,
    cost: f64,
}

#[derive(Deserialize)]
struct PendulumGolden {
    theta: f64,
    theta_dot: f64,
    cases: Vec<PendulumCase>,
}

fn load<T: serde::de::DeserializeOwned>(name: &str) -> T {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs()))
}

#[test]
fn cartpole_alternating_pushes_from_upright() {
    let golden: CartPoleGolden = load("cartpole_seed42.json");
    let env = CartPole::new(golden.actions.len(), 0.99).unwrap();

    let mut rng = seeded(golden.seed);
    let forces: Vec<f64> = golden.actions.iter().map(|&a| env.force(a, &mut rng).unwrap()).collect();
    assert_eq!(forces, golden.forces);

    let mut rng = seeded(golden.seed);
    let mut state = golden.initial_state.clone();
    for (t, &action) in golden.actions.iter().enumerate() {
        let step = env.step(&state, action, &mut rng).unwrap();
        assert!(close(&step.next_state, &golden.states[t + 1]), "step {t}: {:?} vs {:?}", step.next_state, golden.states[t + 1]);
        assert_eq!(step.cost, -1.0);
        assert!(!step.done);
        state = step.next_state;
    }
}

#[test]
fn pendulum_single_step_from_quarter_turn() {
    let golden: PendulumGolden = load("pendulum_step.json");
    let env = Pendulum::new(1, 0.99).unwrap();
    let state = [golden.theta.cos(), golden.theta.sin(), golden.theta_dot];
    for case in &golden.cases {
        assert_eq!(env.torque(case.action, &mut seeded(case.seed)).unwrap(), case.torque);
        let step = env.step(&state, case.action, &mut seeded(case.seed)).unwrap();
        assert!(close(&step.next_state, &case.next_state), "seed {}: {:?}", case.seed, step.next_state);
        assert!((step.cost - case.cost).abs() < 1e-12);
        assert!(!step.done);
    }
}
