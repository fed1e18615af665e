//! Occupancy-dependent cost randomization: cluster expert state-action pairs,
//! weight each cluster by its share of the pairs, and scale costs by a random
//! factor that grows as the share shrinks.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{truncated_normal, EnvError, EnvSpec, Environment, Step, Trajectory};
use crate::error::{Error, Result};
use crate::imitation::disc_input;
use crate::rng::Rng;

/// Truncation bound of the standard normal in the multiplier.
pub const NOISE_TRUNCATION: f64 = 10.0;
pub const DEFAULT_CLUSTERS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStyle {
    /// `|Z| / (0.2 + sqrt(w))`
    HopperStyle,
    /// `0.4 |Z| / sqrt(max(0.01, w - 0.02))`
    WalkerStyle,
}

/// K centroids over `(state, one-hot action)` with membership weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub observation_dim: usize,
    pub action_count: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding. Returns the centroids and the
/// final assignment of every point.
///
/// A cluster that loses all its points is re-seeded at the point farthest
/// from its current centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut Rng, max_iters: usize) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if k == 0 || points.len() < k {
        return Err(Error::Invalid(format!("k-means needs 1 <= k <= points, got k = {k} for {} points", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|x| !x.is_finite())) {
        return Err(Error::Invalid("k-means points must be finite and of equal length".into()));
    }

    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter().position(|&d| {
                acc += d;
                u < acc
            })
            .unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("positive total"))
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignment) {
            counts[j] += 1;
            sums[j].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                let far = points
                    .iter()
                    .zip(&assignment)
                    .map(|(p, &a)| sq_dist(p, &centroids[a]))
                    .enumerate()
                    .fold((0, -1.0), |best, (i, d)| if d > best.1 { (i, d) } else { best })
                    .0;
                log::debug!("k-means cluster {j} emptied; re-seeding at point {far}");
                centroids[j] = points[far].clone();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok((centroids, assignment))
}

/// Live `(state, action)` pairs of a set of trajectories.
pub fn state_action_pairs(trajs: &[Trajectory]) -> Vec<(Vec<f64>, usize)> {
    trajs
        .iter()
        .flat_map(|t| (0..t.live_steps).map(move |i| (t.states[i].clone(), t.actions[i])))
        .collect()
}

/// Clusters expert pairs encoded as `(state, one-hot action)`.
pub fn fit_kmeans(pairs: &[(Vec<f64>, usize)], action_count: usize, k: usize, rng: &mut Rng, max_iters: usize) -> Result<ClusterModel> {
    let points: Vec<Vec<f64>> = pairs.iter().map(|(s, a)| disc_input(s, *a, action_count)).collect();
    let (centroids, assignment) = kmeans(&points, k, rng, max_iters)?;
    let mut counts = vec![0usize; k];
    assignment.iter().for_each(|&j| counts[j] += 1);
    let n = points.len() as f64;
    Ok(ClusterModel {
        centroids,
        weights: counts.iter().map(|&c| c as f64 / n).collect(),
        observation_dim: pairs[0].0.len(),
        action_count,
    })
}

impl ClusterModel {
    /// Weight of the cluster whose centroid is nearest to the encoded pair.
    pub fn weight_of(&self, state: &[f64], action: usize) -> f64 {
        self.weights[nearest(&self.centroids, &disc_input(state, action, self.action_count)).0]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Parse { path: path.into(), line: 1, source })
    }
}

/// Deterministic part of the multiplier for a cluster weight `w`.
pub fn noise_scale(w: f64, style: NoiseStyle) -> f64 {
    match style {
        NoiseStyle::HopperStyle => 1.0 / (0.2 + w.sqrt()),
        NoiseStyle::WalkerStyle => 0.4 / (0.01f64.max(w - 0.02)).sqrt(),
    }
}

/// `noise_scale(w_j) * |Z| * cost` with `Z` a truncated standard normal and
/// `w_j` the weight of the nearest cluster. One normal is drawn per call.
pub fn noisy_cost(model: &ClusterModel, state: &[f64], action: usize, cost: f64, style: NoiseStyle, rng: &mut Rng) -> f64 {
    let z = truncated_normal(rng, NOISE_TRUNCATION);
    noise_scale(model.weight_of(state, action), style) * z.abs() * cost
}

/// Any environment with its costs passed through [`noisy_cost`].
pub struct NoisyCostEnv<E> {
    inner: E,
    model: ClusterModel,
    style: NoiseStyle,
    spec: EnvSpec,
}

impl<E: Environment> NoisyCostEnv<E> {
    pub fn new(inner: E, model: ClusterModel, style: NoiseStyle) -> Result<Self> {
        let base = inner.spec();
        if model.observation_dim != base.observation_dim || model.action_count != base.action_count {
            return Err(Error::Invalid(format!("cluster model does not match environment '{}'", base.name)));
        }
        let spec = EnvSpec { name: format!("{}-noisy", base.name), ..base.clone() };
        Ok(Self { inner, model, style, spec })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn model(&self) -> &ClusterModel {
        &self.model
    }
}

impl<E: Environment> Environment for NoisyCostEnv<E> {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        self.inner.initial_state(rng)
    }

    fn step(&self, state: &[f64], action: usize, rng: &mut Rng) -> Result<Step, EnvError> {
        let step = self.inner.step(state, action, rng)?;
        let cost = noisy_cost(&self.model, state, action, step.cost, self.style, rng);
        Ok(Step { cost, ..step })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_cluster_is_the_mean() {
        let pairs = vec![(vec![0.0, 1.0], 0), (vec![2.0, 3.0], 1), (vec![4.0, -1.0], 1)];
        let model = fit_kmeans(&pairs, 2, 1, &mut seeded(0), 50).unwrap();
        assert_eq!(model.weights, vec![1.0]);
        let want = [2.0, 1.0, 1.0 / 3.0, 2.0 / 3.0];
        for (c, w) in model.centroids[0].iter().zip(want) {
            assert!((c - w).abs() < 1e-15);
        }
    }

    #[test]
    fn separated_blobs_beat_random_centroids() {
        let mut rng = seeded(1);
        let a = Normal::new(0.0, 0.3).unwrap();
        let mut pairs = Vec::new();
        for i in 0..90 {
            let offset = if i < 60 { -5.0 } else { 5.0 };
            pairs.push((vec![offset + a.sample(&mut rng), a.sample(&mut rng)], 0));
        }
        let model = fit_kmeans(&pairs, 1, 2, &mut rng, 100).unwrap();
        let mut weights = model.weights.clone();
        weights.sort_by(f64::total_cmp);
        assert!((weights[0] - 1.0 / 3.0).abs() < 1e-12 && (weights[1] - 2.0 / 3.0).abs() < 1e-12);

        let points: Vec<Vec<f64>> = pairs.iter().map(|(s, a)| disc_input(s, *a, 1)).collect();
        let sse = |cs: &[Vec<f64>]| points.iter().map(|p| nearest(cs, p).1).sum::<f64>();
        let fitted = sse(&model.centroids);
        for _ in 0..1000 {
            let random: Vec<Vec<f64>> =
                (0..2).map(|_| vec![rng.random_range(-8.0..8.0), rng.random_range(-2.0..2.0), 1.0]).collect();
            assert!(fitted <= sse(&random));
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        assert!(fit_kmeans(&[(vec![1.0], 0)], 1, 2, &mut seeded(0), 10).is_err());
    }

    #[test]
    fn single_cluster_hopper_multiplier() {
        let model = ClusterModel { centroids: vec![vec![0.0, 1.0]], weights: vec![1.0], observation_dim: 1, action_count: 1 };
        let mut a = seeded(9);
        let mut b = seeded(9);
        let c = noisy_cost(&model, &[0.3], 0, 2.0, NoiseStyle::HopperStyle, &mut a);
        let z = truncated_normal(&mut b, NOISE_TRUNCATION);
        assert_eq!(c, z.abs() / 1.2 * 2.0);
        assert_eq!(noise_scale(0.0, NoiseStyle::HopperStyle), 5.0);
        assert_eq!(noisy_cost(&model, &[0.3], 0, 0.0, NoiseStyle::WalkerStyle, &mut a), 0.0);
    }

    #[test]
    fn scale_is_nonincreasing_in_weight() {
        for style in [NoiseStyle::HopperStyle, NoiseStyle::WalkerStyle] {
            let mut prev = f64::INFINITY;
            for i in 0..=970 {
                let w = 0.03 + i as f64 * 1e-3;
                let s = noise_scale(w, style);
                assert!(s <= prev);
                prev = s;
            }
        }
    }

    #[test]
    fn model_json_round_trip() {
        let model = ClusterModel { centroids: vec![vec![0.1, 0.7], vec![1.0 / 3.0, 0.0]], weights: vec![0.25, 0.75], observation_dim: 1, action_count: 1 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.json");
        model.save(&path).unwrap();
        assert_eq!(ClusterModel::load(&path).unwrap(), model);
    }
}
