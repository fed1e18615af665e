//! Small stochastic MDPs used by tests, examples and the acceptance run.

use crate::env::{CostAtom, TabularMdp};

/// One state, two arms, one step. Arm 0 costs 1 surely; arm 1 costs 0 with
/// probability 0.9 and 5 with probability 0.1.
///
/// A risk-neutral learner prefers arm 1 (mean 0.5). With `alpha = 0.2` its
/// CVaR is 2.5, so for `lambda = 1` the scaled objective is 3 for arm 1
/// against 2 for arm 0.
pub fn risky_bandit() -> TabularMdp {
    TabularMdp::new(
        "risky-bandit",
        vec![vec![vec![1.0], vec![1.0]]],
        vec![vec![vec![CostAtom::sure(1.0)], vec![CostAtom { value: 0.0, probability: 0.9 }, CostAtom { value: 5.0, probability: 0.1 }]]],
        vec![1.0],
        1,
        0.9,
    )
    .expect("valid bandit")
}

/// Two states, two actions, horizon 3, stochastic transitions and costs.
pub fn two_state() -> TabularMdp {
    let transitions = vec![
        vec![vec![0.7, 0.3], vec![0.2, 0.8]],
        vec![vec![0.4, 0.6], vec![0.9, 0.1]],
    ];
    let costs = vec![
        vec![vec![CostAtom::sure(1.0)], vec![CostAtom { value: 0.0, probability: 0.6 }, CostAtom { value: 2.5, probability: 0.4 }]],
        vec![vec![CostAtom { value: 0.5, probability: 0.5 }, CostAtom { value: 1.5, probability: 0.5 }], vec![CostAtom::sure(-0.5)]],
    ];
    TabularMdp::new("two-state", transitions, costs, vec![0.6, 0.4], 3, 0.9).expect("valid two-state MDP")
}

/// Layout and noise of a grid with safe cells, risky cells and an absorbing goal.
///
/// Layout characters: `S` start (safe), `.` safe, `R` risky, `G` goal.
/// Acting from a safe cell costs `safe_cost`; acting from a risky cell draws
/// from `risky`; the goal is absorbing and free. Actions move up, right, down
/// and left; with probability `slip` the move goes in one of the two
/// perpendicular directions instead. Moves into a wall leave the agent in place.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub layout: Vec<String>,
    pub safe_cost: f64,
    pub risky: Vec<CostAtom>,
    pub slip: f64,
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for GridSpec {
    /// A 2x5 grid: the bottom row is a four-step risky shortcut, the top row a
    /// six-step safe detour.
    fn default() -> Self {
        Self {
            layout: vec![".....".into(), "SRRRG".into()],
            safe_cost: 1.0,
            risky: vec![CostAtom { value: 0.0, probability: 0.9 }, CostAtom { value: 10.0, probability: 0.1 }],
            slip: 0.1,
            horizon: 8,
            gamma: 0.99,
        }
    }
}

/// Moves as (row, column) deltas: up, right, down, left.
const MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

pub fn gridworld(spec: &GridSpec) -> TabularMdp {
    let rows = spec.layout.len();
    let cols = spec.layout[0].len();
    let cells: Vec<Vec<char>> = spec.layout.iter().map(|r| r.chars().collect()).collect();
    assert!(cells.iter().all(|r| r.len() == cols), "ragged grid layout");
    let ns = rows * cols;
    let index = |r: usize, c: usize| r * cols + c;
    let target = |r: usize, c: usize, m: usize| {
        let (dr, dc) = MOVES[m];
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
            index(r, c)
        } else {
            index(nr as usize, nc as usize)
        }
    };
    let mut transitions = vec![vec![vec![0.0; ns]; 4]; ns];
    let mut costs = vec![vec![Vec::new(); 4]; ns];
    let mut initial = vec![0.0; ns];
    for r in 0..rows {
        for c in 0..cols {
            let s = index(r, c);
            let kind = cells[r][c];
            for a in 0..4 {
                if kind == 'G' {
                    transitions[s][a][s] = 1.0;
                    costs[s][a] = vec![CostAtom::sure(0.0)];
                    continue;
                }
                transitions[s][a][target(r, c, a)] += 1.0 - spec.slip;
                transitions[s][a][target(r, c, (a + 1) % 4)] += spec.slip / 2.0;
                transitions[s][a][target(r, c, (a + 3) % 4)] += spec.slip / 2.0;
                costs[s][a] = match kind {
                    'R' => spec.risky.clone(),
                    'S' | '.' => vec![CostAtom::sure(spec.safe_cost)],
                    other => panic!("unknown grid cell '{other}'"),
                };
            }
            if kind == 'S' {
                initial[s] = 1.0;
            }
        }
    }
    TabularMdp::new("gridworld", transitions, costs, initial, spec.horizon, spec.gamma).expect("valid gridworld")
}

/// Linear view mapping a one-hot cell to a one-hot column, so a policy
/// behind it cannot tell the rows apart.
pub fn column_view(spec: &GridSpec) -> Vec<Vec<f64>> {
    let cols = spec.layout[0].len();
    let cells = spec.layout.len() * cols;
    (0..cols).map(|c| (0..cells).map(|s| if s % cols == c { 1.0 } else { 0.0 }).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{enumerate_trajectories, Environment};
    use crate::policy::TabularPolicy;
    use crate::risk::{cvar_alpha, LossBatch};

    #[test]
    fn default_grid_shape() {
        let mdp = gridworld(&GridSpec::default());
        assert_eq!((mdp.state_count(), mdp.action_count()), (10, 4));
        assert_eq!(mdp.initial_distribution()[5], 1.0);
        assert_eq!(mdp.spec().horizon, 8);
    }

    #[test]
    fn column_view_merges_rows() {
        let view = column_view(&GridSpec::default());
        assert_eq!(view.len(), 5);
        // cells 1 and 6 share column 1
        assert_eq!((view[1][1], view[1][6], view[1][2]), (1.0, 1.0, 0.0));
    }

    #[test]
    fn risky_route_is_cheaper_on_average_but_worse_in_the_tail() {
        let spec = GridSpec { slip: 0.0, ..GridSpec::default() };
        let mdp = gridworld(&spec);
        // bottom row: always right; detour: up from the start, right along the top, down at the end
        let mut shortcut = vec![1; 10];
        shortcut[9] = 0;
        let mut detour = vec![1; 10];
        detour[5] = 0;
        detour[4] = 2;
        let evaluate = |choices: &[usize]| {
            let paths = enumerate_trajectories(&mdp, &TabularPolicy::deterministic(choices, 4)).unwrap();
            let batch = LossBatch::weighted(
                paths.iter().map(|p| p.trajectory.loss()).collect(),
                paths.iter().map(|p| p.probability).collect(),
            )
            .unwrap();
            (batch.mean(), cvar_alpha(&batch, 0.3).unwrap())
        };
        let (short_mean, short_cvar) = evaluate(&shortcut);
        let (detour_mean, detour_cvar) = evaluate(&detour);
        assert!(short_mean < detour_mean);
        assert!(short_cvar > detour_cvar);
    }
}
