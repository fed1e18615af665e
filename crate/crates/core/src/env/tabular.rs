//! Finite MDPs with optional finite-support random costs, exact trajectory
//! enumeration, and the forward-recursion occupancy measure.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_simplex, check_state, EnvError, EnvSpec, Environment, Step, Trajectory};
use crate::policy::Policy;
use crate::rng::Rng;

/// Largest enumeration (`S (A S K)^T` branches) attempted.
pub const ENUMERATION_LIMIT: f64 = 1e7;

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostAtom {
    pub value: f64,
    pub probability: f64,
}

impl CostAtom {
    pub fn sure(value: f64) -> Self {
        Self { value, probability: 1.0 }
    }
}

/// Tabular MDP. States are observed as one-hot vectors of length `S`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMdp {
    spec: EnvSpec,
    state_count: usize,
    action_count: usize,
    /// `p(s' | s, a)` at `[(s * A + a) * S + s']`.
    transitions: Vec<f64>,
    /// Cost atoms at `[s * A + a]`.
    costs: Vec<Vec<CostAtom>>,
    initial: Vec<f64>,
}

impl TabularMdp {
    /// `transitions[s][a][s']`, `costs[s][a]` as atom lists, `initial[s]`.
    pub fn new(
        name: &str,
        transitions: Vec<Vec<Vec<f64>>>,
        costs: Vec<Vec<Vec<CostAtom>>>,
        initial: Vec<f64>,
        horizon: usize,
        gamma: f64,
    ) -> Result<Self, EnvError> {
        let s_count = initial.len();
        let a_count = transitions.first().map_or(0, Vec::len);
        let spec = EnvSpec::new(name, s_count, a_count, horizon, gamma)?;
        check_row(&initial, s_count, "initial distribution")?;
        if transitions.len() != s_count || costs.len() != s_count {
            return Err(EnvError::Invalid("transition/cost tables must have one entry per state".into()));
        }
        let mut flat = Vec::with_capacity(s_count * a_count * s_count);
        let mut flat_costs = Vec::with_capacity(s_count * a_count);
        for (s, (rows, cost_rows)) in transitions.into_iter().zip(costs).enumerate() {
            if rows.len() != a_count || cost_rows.len() != a_count {
                return Err(EnvError::Invalid(format!("state {s} does not list {a_count} actions")));
            }
            for (a, (row, atoms)) in rows.into_iter().zip(cost_rows).enumerate() {
                check_row(&row, s_count, &format!("p(.|{s},{a})"))?;
                let probs: Vec<f64> = atoms.iter().map(|c| c.probability).collect();
                check_row(&probs, atoms.len().max(1), &format!("cost atoms of ({s},{a})"))?;
                if atoms.iter().any(|c| !c.value.is_finite()) {
                    return Err(EnvError::Invalid(format!("non-finite cost at ({s},{a})")));
                }
                flat.extend(row);
                flat_costs.push(atoms);
            }
        }
        Ok(Self { spec, state_count: s_count, action_count: a_count, transitions: flat, costs: flat_costs, initial })
    }

    /// Same as [`TabularMdp::new`] with one sure cost per pair.
    pub fn with_costs(
        name: &str,
        transitions: Vec<Vec<Vec<f64>>>,
        costs: Vec<Vec<f64>>,
        initial: Vec<f64>,
        horizon: usize,
        gamma: f64,
    ) -> Result<Self, EnvError> {
        let atoms = costs.into_iter().map(|row| row.into_iter().map(|c| vec![CostAtom::sure(c)]).collect()).collect();
        Self::new(name, transitions, atoms, initial, horizon, gamma)
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.action_count + a) * self.state_count + next]
    }

    fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.action_count + a) * self.state_count;
        &self.transitions[start..start + self.state_count]
    }

    pub fn cost_atoms(&self, s: usize, a: usize) -> &[CostAtom] {
        &self.costs[s * self.action_count + a]
    }

    pub fn expected_cost(&self, s: usize, a: usize) -> f64 {
        self.cost_atoms(s, a).iter().map(|c| c.value * c.probability).sum()
    }

    pub fn has_random_costs(&self) -> bool {
        self.costs.iter().any(|atoms| atoms.len() > 1)
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    /// Index of a one-hot observation.
    pub fn state_index(&self, obs: &[f64]) -> Result<usize, EnvError> {
        check_state(obs, self.state_count)?;
        let mut index = None;
        for (i, &x) in obs.iter().enumerate() {
            match x {
                v if v == 1.0 && index.is_none() => index = Some(i),
                v if v == 0.0 => {}
                _ => return Err(EnvError::Invalid(format!("observation {obs:?} is not one-hot"))),
            }
        }
        index.ok_or_else(|| EnvError::Invalid(format!("observation {obs:?} is not one-hot")))
    }

    /// Action distribution of `policy` at every state, validated.
    pub fn policy_table<P: Policy + ?Sized>(&self, policy: &P) -> Result<Vec<Vec<f64>>, EnvError> {
        (0..self.state_count)
            .map(|s| {
                let probs = policy.action_probs(&one_hot(s, self.state_count));
                check_simplex(&probs, self.action_count)?;
                Ok(probs)
            })
            .collect()
    }

    /// Worst-case number of trajectories, ignoring zero-probability branches.
    pub fn enumeration_size(&self) -> f64 {
        let atoms = self.costs.iter().map(Vec::len).max().unwrap_or(1) as f64;
        let branch = self.action_count as f64 * self.state_count as f64 * atoms;
        self.state_count as f64 * branch.powi(self.spec.horizon as i32)
    }
}

fn check_row(row: &[f64], len: usize, what: &str) -> Result<(), EnvError> {
    let sum: f64 = row.iter().sum();
    if row.len() != len || row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
        return Err(EnvError::Invalid(format!("{what} is not a probability vector: {row:?}")));
    }
    Ok(())
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

impl Environment for TabularMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        one_hot(sample_index(&self.initial, rng), self.state_count)
    }

    fn step(&self, state: &[f64], action: usize, rng: &mut Rng) -> Result<Step, EnvError> {
        let s = self.state_index(state)?;
        if action >= self.action_count {
            return Err(EnvError::InvalidAction { action, count: self.action_count });
        }
        let atoms = self.cost_atoms(s, action);
        let cost = if atoms.len() == 1 {
            atoms[0].value
        } else {
            let probs: Vec<f64> = atoms.iter().map(|c| c.probability).collect();
            atoms[sample_index(&probs, rng)].value
        };
        let next = sample_index(self.transition_row(s, action), rng);
        Ok(Step { next_state: one_hot(next, self.state_count), cost, done: false })
    }
}

/// One enumerated trajectory with its exact probability.
#[derive(Debug, Clone)]
pub struct EnumeratedTrajectory {
    pub trajectory: Trajectory,
    pub probability: f64,
    /// `s_0, ..., s_T` as indices.
    pub state_indices: Vec<usize>,
    /// Index of the realized cost atom at each step.
    pub cost_atoms: Vec<usize>,
}

/// Every horizon-`T` trajectory of `policy` with nonzero probability
/// `p0(s0) prod_t pi(a_t|s_t) p(c_t|s_t,a_t) p(s_{t+1}|s_t,a_t)`.
pub fn enumerate_trajectories<P: Policy + ?Sized>(mdp: &TabularMdp, policy: &P) -> Result<Vec<EnumeratedTrajectory>, EnvError> {
    let table = mdp.policy_table(policy)?;
    let size = supported_leaf_count(mdp, &table);
    if size > ENUMERATION_LIMIT {
        return Err(EnvError::EnumerationTooLarge { size, limit: ENUMERATION_LIMIT });
    }
    let mut out = Vec::new();
    let mut walk = Walk { mdp, table: &table, states: Vec::new(), actions: Vec::new(), atoms: Vec::new(), out: &mut out };
    for (s0, &p0) in mdp.initial.iter().enumerate() {
        if p0 > 0.0 {
            walk.states.push(s0);
            walk.descend(p0);
            walk.states.pop();
        }
    }
    Ok(out)
}

/// Number of positive-probability trajectories, counted by a forward pass
/// over the supports of the policy, the cost atoms and the transitions.
fn supported_leaf_count(mdp: &TabularMdp, table: &[Vec<f64>]) -> f64 {
    let ns = mdp.state_count;
    let mut counts: Vec<f64> = mdp.initial.iter().map(|&p| if p > 0.0 { 1.0 } else { 0.0 }).collect();
    for _ in 0..mdp.spec.horizon {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if counts[s] == 0.0 {
                continue;
            }
            for a in 0..mdp.action_count {
                if table[s][a] == 0.0 {
                    continue;
                }
                let atoms = mdp.cost_atoms(s, a).iter().filter(|c| c.probability > 0.0).count() as f64;
                for (s2, slot) in next.iter_mut().enumerate() {
                    if mdp.transition(s, a, s2) > 0.0 {
                        *slot += counts[s] * atoms;
                    }
                }
            }
        }
        counts = next;
    }
    counts.iter().sum()
}

struct Walk<'a> {
    mdp: &'a TabularMdp,
    table: &'a [Vec<f64>],
    states: Vec<usize>,
    actions: Vec<usize>,
    atoms: Vec<usize>,
    out: &'a mut Vec<EnumeratedTrajectory>,
}

impl Walk<'_> {
    fn descend(&mut self, probability: f64) {
        let mdp = self.mdp;
        if self.actions.len() == mdp.spec.horizon {
            self.emit(probability);
            return;
        }
        let s = *self.states.last().expect("walk starts from an initial state");
        for a in 0..mdp.action_count {
            let pa = self.table[s][a];
            if pa == 0.0 {
                continue;
            }
            for (k, atom) in mdp.cost_atoms(s, a).iter().enumerate() {
                if atom.probability == 0.0 {
                    continue;
                }
                for next in 0..mdp.state_count {
                    let pn = mdp.transition(s, a, next);
                    if pn == 0.0 {
                        continue;
                    }
                    self.actions.push(a);
                    self.atoms.push(k);
                    self.states.push(next);
                    self.descend(probability * pa * atom.probability * pn);
                    self.states.pop();
                    self.atoms.pop();
                    self.actions.pop();
                }
            }
        }
    }

    fn emit(&mut self, probability: f64) {
        let mdp = self.mdp;
        let costs = self
            .states
            .iter()
            .zip(&self.actions)
            .zip(&self.atoms)
            .map(|((&s, &a), &k)| mdp.cost_atoms(s, a)[k].value)
            .collect();
        let trajectory = Trajectory {
            states: self.states.iter().map(|&s| one_hot(s, mdp.state_count)).collect(),
            actions: self.actions.clone(),
            costs,
            gamma: mdp.spec.gamma,
            live_steps: self.actions.len(),
        };
        self.out.push(EnumeratedTrajectory {
            trajectory,
            probability,
            state_indices: self.states.clone(),
            cost_atoms: self.atoms.clone(),
        });
    }
}

/// Occupancy measure `d(s,a) = sum_{t<T} gamma^t P(s_t = s, a_t = a)` by
/// forward recursion over the state marginals.
pub fn forward_occupancy<P: Policy + ?Sized>(mdp: &TabularMdp, policy: &P) -> Result<Vec<Vec<f64>>, EnvError> {
    let table = mdp.policy_table(policy)?;
    let (ns, na) = (mdp.state_count, mdp.action_count);
    let mut occupancy = vec![vec![0.0; na]; ns];
    let mut marginal = mdp.initial.clone();
    let mut discount = 1.0;
    for _ in 0..mdp.spec.horizon {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let mass = marginal[s] * table[s][a];
                occupancy[s][a] += discount * mass;
                for (s2, slot) in next.iter_mut().enumerate() {
                    *slot += mass * mdp.transition(s, a, s2);
                }
            }
        }
        marginal = next;
        discount *= mdp.spec.gamma;
    }
    Ok(occupancy)
}
