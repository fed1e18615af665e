//! Dense feed-forward networks with hand-written backpropagation, Adam and
//! weight clipping. Serves as both the policy head and the discriminator.
//!
//! Parameters live in one flat vector. Layer `l` stores its weight matrix
//! (`out x in`, row-major) followed by its bias vector.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("input has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid network: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
    Sigmoid,
    Softmax,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => z.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Sigmoid => z.iter_mut().for_each(|x| *x = sigmoid(*x)),
            Activation::Softmax => softmax_in_place(z),
        }
    }

    /// Pulls a cotangent on the layer output back to its pre-activation.
    fn pullback(self, output: &[f64], cotangent: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => cotangent.iter_mut().zip(output).for_each(|(g, y)| *g *= 1.0 - y * y),
            Activation::Sigmoid => cotangent.iter_mut().zip(output).for_each(|(g, y)| *g *= y * (1.0 - y)),
            Activation::Softmax => {
                let dot: f64 = cotangent.iter().zip(output).map(|(g, y)| g * y).sum();
                cotangent.iter_mut().zip(output).for_each(|(g, y)| *g = y * (*g - dot));
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in z.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    z.iter_mut().for_each(|x| *x /= total);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Layer outputs recorded by [`Mlp::forward_trace`]; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    pub values: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace holds at least the input")
    }
}

impl Mlp {
    /// Network with all parameters zero.
    pub fn zeros(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(NnError::Invalid(format!("layer sizes {layer_sizes:?}")));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(NnError::Invalid(format!(
                "{} activations for {} layers",
                activations.len(),
                layer_sizes.len() - 1
            )));
        }
        let count = layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        Ok(Self { layer_sizes, activations, params: vec![0.0; count] })
    }

    /// Per-layer uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(layer_sizes: Vec<usize>, activations: Vec<Activation>, rng: &mut Rng) -> Result<Self, NnError> {
        let mut net = Self::zeros(layer_sizes, activations)?;
        let mut offset = 0;
        for w in net.layer_sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for p in &mut net.params[offset..offset + (w[0] + 1) * w[1]] {
                *p = rng.random_range(-bound..=bound);
            }
            offset += (w[0] + 1) * w[1];
        }
        Ok(net)
    }

    /// `input -> hidden... -> output` with tanh hidden layers and the given head.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize, head: Activation, rng: &mut Rng) -> Result<Self, NnError> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut activations = vec![Activation::Tanh; hidden.len()];
        activations.push(head);
        Self::init(sizes, activations, rng)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<(), NnError> {
        if params.len() != self.params.len() {
            return Err(NnError::Dimension { expected: self.params.len(), got: params.len() });
        }
        self.params = params;
        Ok(())
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self, NnError> {
        let mut net = self.clone();
        net.set_params(params)?;
        Ok(net)
    }

    pub fn head(&self) -> Activation {
        *self.activations.last().expect("at least one layer")
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut trace = self.forward_trace(input)?;
        Ok(trace.values.pop().expect("non-empty trace"))
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::Dimension { expected: self.input_dim(), got: input.len() });
        }
        let mut values = Vec::with_capacity(self.layer_sizes.len());
        values.push(input.to_vec());
        let mut offset = 0;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            let prev = &values[l];
            let mut z: Vec<f64> = (0..n_out)
                .map(|o| bias[o] + weights[o * n_in..(o + 1) * n_in].iter().zip(prev).map(|(w, x)| w * x).sum::<f64>())
                .collect();
            self.activations[l].apply(&mut z);
            values.push(z);
            offset += (n_in + 1) * n_out;
        }
        Ok(Trace { values })
    }

    /// Gradient of `cotangent . output` with respect to the parameters.
    pub fn backward(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>, NnError> {
        let trace = self.forward_trace(input)?;
        let mut grad = vec![0.0; self.param_count()];
        self.accumulate_backward(&trace, cotangent, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `scale * d(cotangent . output)/d(params)` into `grad`.
    pub fn accumulate_backward(&self, trace: &Trace, cotangent: &[f64], scale: f64, grad: &mut [f64]) -> Result<(), NnError> {
        if cotangent.len() != self.output_dim() {
            return Err(NnError::Dimension { expected: self.output_dim(), got: cotangent.len() });
        }
        let mut delta: Vec<f64> = cotangent.iter().map(|g| g * scale).collect();
        self.head().pullback(trace.output(), &mut delta);
        self.backprop_pre_activation(trace, delta, grad);
        Ok(())
    }

    /// Adds `scale * d(cotangent . z_out)/d(params)` into `grad`, where
    /// `z_out` is the pre-activation of the last layer (logits for a softmax head).
    pub fn accumulate_backward_logits(&self, trace: &Trace, cotangent: &[f64], scale: f64, grad: &mut [f64]) -> Result<(), NnError> {
        if cotangent.len() != self.output_dim() {
            return Err(NnError::Dimension { expected: self.output_dim(), got: cotangent.len() });
        }
        self.backprop_pre_activation(trace, cotangent.iter().map(|g| g * scale).collect(), grad);
        Ok(())
    }

    fn backprop_pre_activation(&self, trace: &Trace, mut delta: Vec<f64>, grad: &mut [f64]) {
        let layers = self.layer_sizes.len() - 1;
        let mut offset = self.params.len();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            offset -= (n_in + 1) * n_out;
            let input = &trace.values[l];
            let (gw, gb) = grad[offset..offset + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
                }
                gb[o] += d;
            }
            if l > 0 {
                let weights = &self.params[offset..offset + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]).for_each(|(p, w)| *p += d * w);
                    }
                }
                self.activations[l - 1].pullback(input, &mut prev);
                delta = prev;
            }
        }
    }

    /// Directional derivative of the last pre-activation along a parameter
    /// tangent (forward mode).
    pub fn jvp_logits(&self, trace: &Trace, tangent: &[f64]) -> Result<Vec<f64>, NnError> {
        if tangent.len() != self.params.len() {
            return Err(NnError::Dimension { expected: self.params.len(), got: tangent.len() });
        }
        let layers = self.layer_sizes.len() - 1;
        let mut d_input = vec![0.0; self.input_dim()];
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let d_weights = &tangent[offset..offset + n_in * n_out];
            let d_bias = &tangent[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            let input = &trace.values[l];
            let mut dz: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = o * n_in..(o + 1) * n_in;
                    d_bias[o]
                        + d_weights[row.clone()].iter().zip(input).map(|(dw, x)| dw * x).sum::<f64>()
                        + weights[row].iter().zip(&d_input).map(|(w, dx)| w * dx).sum::<f64>()
                })
                .collect();
            if l + 1 == layers {
                return Ok(dz);
            }
            // activation Jacobians are symmetric, so the pullback doubles as the pushforward
            self.activations[l].pullback(&trace.values[l + 1], &mut dz);
            d_input = dz;
            offset += (n_in + 1) * n_out;
        }
        unreachable!("network has at least one layer")
    }

    /// Copy with every parameter clamped to `[-bound, bound]`.
    pub fn clip_weights(&self, bound: f64) -> Self {
        let mut net = self.clone();
        net.clip_in_place(bound);
        net
    }

    pub fn clip_in_place(&mut self, bound: f64) {
        assert!(bound > 0.0, "clip bound must be positive");
        self.params.iter_mut().for_each(|p| *p = p.clamp(-bound, bound));
    }

    pub fn max_abs_param(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.abs()))
    }

    pub fn to_checkpoint(&self, metadata: Option<serde_json::Value>) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            activations: self.activations.clone(),
            params: self.params.clone(),
            metadata,
        }
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self, NnError> {
        if checkpoint.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(NnError::Invalid(format!("unsupported checkpoint version {}", checkpoint.format_version)));
        }
        let mut net = Self::zeros(checkpoint.layer_sizes.clone(), checkpoint.activations.clone())?;
        net.set_params(checkpoint.params.clone())?;
        Ok(net)
    }

    /// SHA-256 over the architecture and the little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for s in &self.layer_sizes {
            hasher.update((*s as u64).to_le_bytes());
        }
        for a in &self.activations {
            hasher.update([*a as u8]);
        }
        for p in &self.params {
            hasher.update(p.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Versioned JSON parameter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Parse { path: path.into(), line: 1, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], direction: Direction) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed under Adam");
        assert_eq!(grad.len(), self.m.len(), "gradient length does not match parameters");
        self.t += 1;
        let correction1 = 1.0 - self.beta1.powi(self.t as i32);
        let correction2 = 1.0 - self.beta2.powi(self.t as i32);
        let sign = match direction {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        };
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / correction1;
            let v_hat = self.v[i] / correction2;
            params[i] += sign * self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, Rng};
    use proptest::prelude::*;

    fn random_net(rng: &mut Rng, head: Activation) -> Mlp {
        let input = rng.random_range(1..5);
        let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(1..6)).collect();
        let output = rng.random_range(1..4);
        let mut net = Mlp::with_hidden(input, &hidden, output, head, rng).unwrap();
        for p in net.params_mut() {
            *p *= 2.0;
        }
        net
    }

    /// Independent evaluation with explicit matrices per layer.
    fn reference_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut offset = 0;
        for (l, w) in net.layer_sizes().windows(2).enumerate() {
            let matrix: Vec<Vec<f64>> =
                (0..w[1]).map(|o| net.params()[offset + o * w[0]..offset + (o + 1) * w[0]].to_vec()).collect();
            let bias = &net.params()[offset + w[0] * w[1]..offset + (w[0] + 1) * w[1]];
            let mut z: Vec<f64> = matrix.iter().zip(bias).map(|(row, b)| row.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>() + b).collect();
            match net.activations()[l] {
                Activation::Tanh => z = z.iter().map(|v| v.tanh()).collect(),
                Activation::Sigmoid => z = z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
                Activation::Softmax => {
                    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
                    let s: f64 = e.iter().sum();
                    z = e.iter().map(|v| v / s).collect();
                }
                Activation::Identity => {}
            }
            x = z;
            offset += (w[0] + 1) * w[1];
        }
        x
    }

    #[test]
    fn param_count_formula() {
        let net = Mlp::zeros(vec![4, 32, 32, 2], vec![Activation::Tanh, Activation::Tanh, Activation::Softmax]).unwrap();
        assert_eq!(net.param_count(), 5 * 32 + 33 * 32 + 33 * 2);
    }

    #[test]
    fn zero_net_with_tanh_head_outputs_zero() {
        let net = Mlp::zeros(vec![3, 4, 2], vec![Activation::Tanh, Activation::Tanh]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(vec![3, 3], vec![Activation::Identity]).unwrap();
        for i in 0..3 {
            net.params_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(net.forward(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = Mlp::zeros(vec![3, 2], vec![Activation::Identity]).unwrap();
        assert_eq!(net.forward(&[1.0]), Err(NnError::Dimension { expected: 3, got: 1 }));
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(Mlp::zeros(vec![3], vec![]).is_err());
        assert!(Mlp::zeros(vec![3, 2], vec![]).is_err());
    }

    #[test]
    fn forward_matches_reference_arithmetic() {
        let mut rng = seeded(1);
        for head in [Activation::Tanh, Activation::Identity, Activation::Sigmoid, Activation::Softmax] {
            for _ in 0..25 {
                let net = random_net(&mut rng, head);
                let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let got = net.forward(&x).unwrap();
                let want = reference_forward(&net, &x);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let mut rng = seeded(2);
        let net = random_net(&mut rng, Activation::Sigmoid);
        let x = vec![0.3; net.input_dim()];
        let g = net.backward(&x, &vec![0.0; net.output_dim()]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_net_gradient_does_not_depend_on_params() {
        let mut rng = seeded(3);
        let a = Mlp::init(vec![3, 2], vec![Activation::Identity], &mut rng).unwrap();
        let b = Mlp::init(vec![3, 2], vec![Activation::Identity], &mut rng).unwrap();
        let x = [0.1, -0.7, 2.0];
        let c = [1.5, -0.5];
        assert_eq!(a.backward(&x, &c).unwrap(), b.backward(&x, &c).unwrap());
    }

    #[test]
    fn softmax_head_is_on_simplex() {
        let mut rng = seeded(4);
        for _ in 0..50 {
            let net = random_net(&mut rng, Activation::Softmax);
            let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = net.forward(&x).unwrap();
            assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(y.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn jvp_matches_reverse_mode() {
        // v . J^T u == u . J v for every pair of directions
        let mut rng = seeded(5);
        for head in [Activation::Softmax, Activation::Identity] {
            for _ in 0..20 {
                let net = random_net(&mut rng, head);
                let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let trace = net.forward_trace(&x).unwrap();
                let u: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut jt_u = vec![0.0; net.param_count()];
                net.accumulate_backward_logits(&trace, &u, 1.0, &mut jt_u).unwrap();
                let lhs: f64 = jt_u.iter().zip(&v).map(|(a, b)| a * b).sum();
                let rhs: f64 = net.jvp_logits(&trace, &v).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum();
                assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn clip_examples() {
        let mut net = Mlp::zeros(vec![1, 1], vec![Activation::Identity]).unwrap();
        net.set_params(vec![0.3, -1.0]).unwrap();
        let clipped = net.clip_weights(0.05);
        assert_eq!(clipped.params(), &[0.05, -0.05]);
        net.set_params(vec![0.01, -0.02]).unwrap();
        assert_eq!(net.clip_weights(0.05), net);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(params in prop::collection::vec(-3.0f64..3.0, 4), bound in 0.01f64..2.0) {
            let net = Mlp::zeros(vec![1, 2], vec![Activation::Identity]).unwrap().with_params(params).unwrap();
            let once = net.clip_weights(bound);
            prop_assert_eq!(once.clip_weights(bound), once.clone());
            prop_assert!(once.max_abs_param() <= bound);
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(3, 1e-3);
        let mut params = vec![1.0, -2.0, 0.5];
        adam.step(&mut params, &[0.0; 3], Direction::Descend);
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_by_hand() {
        // m = 0.1 g, v = 0.001 g^2; bias-corrected m_hat = g, v_hat = g^2
        let g = [0.5, -2.0, 1e-3];
        let lr = 0.01;
        let mut adam = Adam::new(3, lr);
        let mut params = vec![0.0; 3];
        adam.step(&mut params, &g, Direction::Descend);
        for (p, gi) in params.iter().zip(&g) {
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
        }
        let mut ascend = Adam::new(3, lr);
        let mut up = vec![0.0; 3];
        ascend.step(&mut up, &g, Direction::Ascend);
        assert!(up.iter().zip(&params).all(|(a, b)| (a + b).abs() < 1e-18));
    }

    #[test]
    fn adam_damps_oscillating_gradient() {
        // step 2 with g then -g: m = 0.09 g - 0.1 g = -0.01 g; m_hat = -0.01/0.19 g,
        // v_hat = g^2, so the second move is lr * 0.0526 vs lr for sign-SGD
        let lr = 0.1;
        let mut adam = Adam::new(1, lr);
        let mut p = vec![0.0];
        adam.step(&mut p, &[1.0], Direction::Descend);
        let after_first = p[0];
        adam.step(&mut p, &[-1.0], Direction::Descend);
        let second_move = (p[0] - after_first).abs();
        let expected = lr * (0.01 / 0.19) / (1.0 + 1e-8);
        assert!((second_move - expected).abs() < 1e-12);
        assert!(second_move < lr * 1.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = seeded(8);
        let net = Mlp::with_hidden(4, &[8], 2, Activation::Softmax, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.to_checkpoint(Some(serde_json::json!({"seed": 8}))).save(&path).unwrap();
        let back = Mlp::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.checksum(), net.checksum());
    }
}
