//! Dense feed-forward policy and value approximators with exact
//! reverse-mode gradients.
//!
//! Both networks are small tanh MLPs in double precision: the policy maps a
//! local observation to softmax action probabilities, the centralized value
//! network maps the global state to a scalar. All agents share one
//! [`ParamSet`]. Gradients are computed by hand-rolled backpropagation and
//! validated against central finite differences (see
//! [`finite_difference_grad`]).

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("input dimension {got} does not match expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("action index {action} out of range for {actions} actions")]
    ActionOutOfRange { action: usize, actions: usize },
    #[error("gradient length {got} does not match parameter count {expected}")]
    GradientLengthMismatch { expected: usize, got: usize },
    #[error("non-finite gradient entry at flat index {0}; update skipped")]
    NonFiniteGradient(usize),
    #[error("flat parameter vector length {got} does not match {expected}")]
    FlatLengthMismatch { expected: usize, got: usize },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Checkpoint(String),
}

/// Probability masses over a finite action set.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Inverse-CDF sample using one uniform draw.
    pub fn sample(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

/// Log-probability of `action` and the distribution entropy in nats.
pub fn log_prob_and_entropy(
    dist: &ActionDistribution,
    action: usize,
) -> Result<(f64, f64), ApproxError> {
    if action >= dist.probs.len() {
        return Err(ApproxError::ActionOutOfRange { action, actions: dist.probs.len() });
    }
    let mut entropy = 0.0;
    for &p in &dist.probs {
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    Ok((dist.probs[action].ln(), entropy))
}

/// One dense network: tanh hidden layers, linear output.
/// Weights are stored row-major, `weights[l][j * in + i]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-layer activations retained for backpropagation.
/// `activations[0]` is the input, the last entry is the linear output.
pub struct MlpCache {
    activations: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache has output")
    }
}

impl Mlp {
    fn new(sizes: &[usize], gains: &[f64], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2);
        assert_eq!(gains.len(), sizes.len() - 1);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            weights.push(orthogonal(sizes[l + 1], sizes[l], gains[l], rng));
            biases.push(vec![0.0; sizes[l + 1]]);
        }
        Self { sizes: sizes.to_vec(), weights, biases }
    }

    fn zeros_like(&self) -> Self {
        Self {
            sizes: self.sizes.clone(),
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn forward_cached(&self, input: &[f64]) -> MlpCache {
        let n_layers = self.weights.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        for l in 0..n_layers {
            let a_in = &activations[l];
            let out_dim = self.sizes[l + 1];
            let in_dim = self.sizes[l];
            let mut out = vec![0.0; out_dim];
            for j in 0..out_dim {
                let row = &self.weights[l][j * in_dim..(j + 1) * in_dim];
                let mut z = self.biases[l][j];
                for (w, a) in row.iter().zip(a_in) {
                    z += w * a;
                }
                out[j] = if l < n_layers - 1 { z.tanh() } else { z };
            }
            activations.push(out);
        }
        MlpCache { activations }
    }

    /// Accumulates dL/d(params) given dL/d(output) into `grads`.
    fn backward(&self, cache: &MlpCache, d_output: &[f64], grads: &mut Mlp) {
        let n_layers = self.weights.len();
        let mut delta = d_output.to_vec();
        for l in (0..n_layers).rev() {
            let a_in = &cache.activations[l];
            let in_dim = self.sizes[l];
            for (j, &dj) in delta.iter().enumerate() {
                grads.biases[l][j] += dj;
                let row = &mut grads.weights[l][j * in_dim..(j + 1) * in_dim];
                for (g, a) in row.iter_mut().zip(a_in) {
                    *g += dj * a;
                }
            }
            if l > 0 {
                let mut d_in = vec![0.0; in_dim];
                for (j, &dj) in delta.iter().enumerate() {
                    let row = &self.weights[l][j * in_dim..(j + 1) * in_dim];
                    for (d, w) in d_in.iter_mut().zip(row) {
                        *d += w * dj;
                    }
                }
                // hidden activations are tanh outputs
                for (d, a) in d_in.iter_mut().zip(a_in) {
                    *d *= 1.0 - a * a;
                }
                delta = d_in;
            }
        }
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
    }

    fn read_flat<'a>(&mut self, mut flat: &'a [f64]) -> &'a [f64] {
        for l in 0..self.weights.len() {
            let (w, rest) = flat.split_at(self.weights[l].len());
            self.weights[l].copy_from_slice(w);
            let (b, rest) = rest.split_at(self.biases[l].len());
            self.biases[l].copy_from_slice(b);
            flat = rest;
        }
        flat
    }
}

/// Orthogonal-style init: Gram-Schmidt over the shorter dimension of a
/// Gaussian matrix, scaled by `gain`.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (n_vec, dim, transpose) =
        if rows <= cols { (rows, cols, false) } else { (cols, rows, true) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while basis.len() < n_vec {
        let mut v: Vec<f64> =
            (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        for vi in &mut v {
            *vi /= norm;
        }
        basis.push(v);
    }
    let mut out = vec![0.0; rows * cols];
    for (r, row) in basis.iter().enumerate() {
        for (c, &val) in row.iter().enumerate() {
            let (i, j) = if transpose { (c, r) } else { (r, c) };
            out[i * cols + j] = gain * val;
        }
    }
    out
}

/// All learnable parameters: shared policy network plus centralized value
/// network, with a bijective flat-index view for gradient checking and
/// optimizer updates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    policy: Mlp,
    value: Mlp,
}

impl ParamSet {
    /// Seeded construction. Hidden layers use gain sqrt(2); the final policy
    /// layer uses gain 0.01 so initial action distributions are near uniform.
    pub fn new(
        obs_dim: usize,
        n_actions: usize,
        state_dim: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = std::f64::consts::SQRT_2;

        let mut policy_sizes = vec![obs_dim];
        policy_sizes.extend_from_slice(hidden);
        policy_sizes.push(n_actions);
        let mut policy_gains = vec![gain; hidden.len()];
        policy_gains.push(0.01);

        let mut value_sizes = vec![state_dim];
        value_sizes.extend_from_slice(hidden);
        value_sizes.push(1);
        let mut value_gains = vec![gain; hidden.len()];
        value_gains.push(1.0);

        Self {
            policy: Mlp::new(&policy_sizes, &policy_gains, &mut rng),
            value: Mlp::new(&value_sizes, &value_gains, &mut rng),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.policy.output_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.value.input_dim()
    }

    pub fn param_count(&self) -> usize {
        self.policy.param_count() + self.value.param_count()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.policy.write_flat(&mut out);
        self.value.write_flat(&mut out);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), ApproxError> {
        if flat.len() != self.param_count() {
            return Err(ApproxError::FlatLengthMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let rest = self.policy.read_flat(flat);
        self.value.read_flat(rest);
        Ok(())
    }

    /// Forward policy pass retaining the cache needed for backpropagation.
    pub fn policy_eval(&self, obs: &[f64]) -> Result<PolicyEval, ApproxError> {
        if obs.len() != self.policy.input_dim() {
            return Err(ApproxError::DimensionMismatch {
                expected: self.policy.input_dim(),
                got: obs.len(),
            });
        }
        let cache = self.policy.forward_cached(obs);
        let probs = softmax(cache.output());
        Ok(PolicyEval { probs, cache })
    }

    pub fn policy_backward(&self, eval: &PolicyEval, d_logits: &[f64], grads: &mut ParamGrads) {
        self.policy.backward(&eval.cache, d_logits, &mut grads.policy);
    }

    pub fn value_eval(&self, state: &[f64]) -> Result<ValueEval, ApproxError> {
        if state.len() != self.value.input_dim() {
            return Err(ApproxError::DimensionMismatch {
                expected: self.value.input_dim(),
                got: state.len(),
            });
        }
        let cache = self.value.forward_cached(state);
        let value = cache.output()[0];
        Ok(ValueEval { value, cache })
    }

    pub fn value_backward(&self, eval: &ValueEval, d_out: f64, grads: &mut ParamGrads) {
        self.value.backward(&eval.cache, &[d_out], &mut grads.value);
    }
}

pub struct PolicyEval {
    pub probs: Vec<f64>,
    cache: MlpCache,
}

pub struct ValueEval {
    pub value: f64,
    cache: MlpCache,
}

/// Softmax-normalized action distribution for a local observation.
pub fn policy_forward(params: &ParamSet, obs: &[f64]) -> Result<ActionDistribution, ApproxError> {
    Ok(ActionDistribution { probs: params.policy_eval(obs)?.probs })
}

/// Centralized value estimate for a global state.
pub fn value_forward(params: &ParamSet, state: &[f64]) -> Result<f64, ApproxError> {
    Ok(params.value_eval(state)?.value)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradient accumulator shaped like a [`ParamSet`].
pub struct ParamGrads {
    policy: Mlp,
    value: Mlp,
}

impl ParamGrads {
    pub fn zeros(params: &ParamSet) -> Self {
        Self { policy: params.policy.zeros_like(), value: params.value.zeros_like() }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.policy.write_flat(&mut out);
        self.value.write_flat(&mut out);
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for net in [&mut self.policy, &mut self.value] {
            for w in &mut net.weights {
                for v in w.iter_mut() {
                    *v *= factor;
                }
            }
            for b in &mut net.biases {
                for v in b.iter_mut() {
                    *v *= factor;
                }
            }
        }
    }
}

/// Optimizer selection for [`sgd_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators (unused for plain SGD).
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(param_count: usize) -> Self {
        Self { m: vec![0.0; param_count], v: vec![0.0; param_count], t: 0 }
    }
}

/// One descent step on the flat parameter view. Non-finite gradient entries
/// abort the update with parameters and optimizer state untouched.
pub fn sgd_step(
    params: &mut ParamSet,
    grad: &[f64],
    lr: f64,
    kind: &OptimizerKind,
    state: &mut OptimizerState,
) -> Result<(), ApproxError> {
    let n = params.param_count();
    if grad.len() != n {
        return Err(ApproxError::GradientLengthMismatch { expected: n, got: grad.len() });
    }
    if let Some(idx) = grad.iter().position(|g| !g.is_finite()) {
        return Err(ApproxError::NonFiniteGradient(idx));
    }
    let mut flat = params.to_flat();
    match *kind {
        OptimizerKind::Sgd => {
            for (p, g) in flat.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            state.t += 1;
            let bc1 = 1.0 - beta1.powi(state.t as i32);
            let bc2 = 1.0 - beta2.powi(state.t as i32);
            for i in 0..n {
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                flat[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    params.set_flat(&flat)
}

/// Central finite differences of `loss` over every flat parameter.
/// Test and selftest oracle; intentionally independent of [`Mlp::backward`].
pub fn finite_difference_grad<F: Fn(&ParamSet) -> f64>(
    params: &ParamSet,
    loss: F,
    h: f64,
) -> Vec<f64> {
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut grad = vec![0.0; base.len()];
    let mut flat = base.clone();
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.set_flat(&flat).unwrap();
        let plus = loss(&probe);
        flat[i] = base[i] - h;
        probe.set_flat(&flat).unwrap();
        let minus = loss(&probe);
        flat[i] = base[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

const CHECKPOINT_MAGIC: &str = "marpo-checkpoint v1";

/// Writes a bit-exact text checkpoint: layer shapes plus row-major f64 bit
/// patterns in hex.
pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<(), ApproxError> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    for (name, net) in [("policy", &params.policy), ("value", &params.value)] {
        write!(out, "{name}").unwrap();
        for s in &net.sizes {
            write!(out, " {s}").unwrap();
        }
        out.push('\n');
        for l in 0..net.weights.len() {
            for (tag, vals) in [("w", &net.weights[l]), ("b", &net.biases[l])] {
                write!(out, "{tag}{l}").unwrap();
                for v in vals.iter() {
                    write!(out, " {:016x}", v.to_bits()).unwrap();
                }
                out.push('\n');
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ParamSet, ApproxError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(ApproxError::Checkpoint("bad magic line".into()));
    }
    let policy = read_net(&mut lines, "policy")?;
    let value = read_net(&mut lines, "value")?;
    Ok(ParamSet { policy, value })
}

fn read_net<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    name: &str,
) -> Result<Mlp, ApproxError> {
    let header = lines
        .next()
        .ok_or_else(|| ApproxError::Checkpoint(format!("missing {name} header")))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(name) {
        return Err(ApproxError::Checkpoint(format!("expected {name} header, got {header:?}")));
    }
    let sizes: Vec<usize> = parts
        .map(|p| p.parse().map_err(|_| ApproxError::Checkpoint(format!("bad size {p:?}"))))
        .collect::<Result<_, _>>()?;
    if sizes.len() < 2 {
        return Err(ApproxError::Checkpoint(format!("{name} needs at least 2 layer sizes")));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..sizes.len() - 1 {
        weights.push(read_values(lines, &format!("w{l}"), sizes[l + 1] * sizes[l])?);
        biases.push(read_values(lines, &format!("b{l}"), sizes[l + 1])?);
    }
    Ok(Mlp { sizes, weights, biases })
}

fn read_values<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    tag: &str,
    count: usize,
) -> Result<Vec<f64>, ApproxError> {
    let line = lines
        .next()
        .ok_or_else(|| ApproxError::Checkpoint(format!("missing {tag} line")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(ApproxError::Checkpoint(format!("expected tag {tag}, got {line:?}")));
    }
    let vals: Vec<f64> = parts
        .map(|p| {
            u64::from_str_radix(p, 16)
                .map(f64::from_bits)
                .map_err(|_| ApproxError::Checkpoint(format!("bad hex value {p:?}")))
        })
        .collect::<Result<_, _>>()?;
    if vals.len() != count {
        return Err(ApproxError::Checkpoint(format!(
            "{tag}: expected {count} values, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(params: &ParamSet) -> ParamSet {
        let mut p = params.clone();
        p.set_flat(&vec![0.0; p.param_count()]).unwrap();
        p
    }

    #[test]
    fn zero_params_give_uniform_policy_and_zero_value() {
        let params = zeroed(&ParamSet::new(3, 4, 2, &[8, 8], 0));
        let dist = policy_forward(&params, &[0.5, -1.0, 2.0]).unwrap();
        for p in &dist.probs {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert_eq!(value_forward(&params, &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn forward_is_deterministic_and_normalized() {
        let params = ParamSet::new(3, 4, 2, &[16, 16], 7);
        let a = policy_forward(&params, &[0.1, 0.2, 0.3]).unwrap();
        let b = policy_forward(&params, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a, b);
        let sum: f64 = a.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hand_built_single_layer_matches_manual_softmax() {
        // 1-layer net: logits = W x + b, chosen by hand
        let mut params = ParamSet::new(2, 2, 2, &[], 0);
        // flat layout: policy w (2x2 row-major), policy b (2), value w, value b
        params.set_flat(&[1.0, 0.0, 0.0, 1.0, 0.1, -0.1, 2.0, -1.0, 0.5]).unwrap();
        let x = [0.3, 0.7];
        let z0: f64 = 1.0 * 0.3 + 0.0 * 0.7 + 0.1;
        let z1: f64 = 0.0 * 0.3 + 1.0 * 0.7 - 0.1;
        let e0 = (z0 - z0.max(z1)).exp();
        let e1 = (z1 - z0.max(z1)).exp();
        let dist = policy_forward(&params, &x).unwrap();
        assert!((dist.probs[0] - e0 / (e0 + e1)).abs() < 1e-15);
        assert!((dist.probs[1] - e1 / (e0 + e1)).abs() < 1e-15);

        let v = value_forward(&params, &[1.0, 2.0]).unwrap();
        assert!((v - (2.0 * 1.0 - 1.0 * 2.0 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let params = ParamSet::new(3, 2, 2, &[4], 0);
        assert!(policy_forward(&params, &[1.0, 2.0]).is_err());
        assert!(value_forward(&params, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn log_prob_and_entropy_examples() {
        let uniform = ActionDistribution { probs: vec![0.25; 4] };
        let (_, entropy) = log_prob_and_entropy(&uniform, 0).unwrap();
        assert!((entropy - 4.0_f64.ln()).abs() < 1e-12);

        let eps = 1e-12;
        let peaked = ActionDistribution { probs: vec![1.0 - 3.0 * eps, eps, eps, eps] };
        let (_, entropy) = log_prob_and_entropy(&peaked, 0).unwrap();
        assert!(entropy < 1e-9);

        let half = ActionDistribution { probs: vec![0.5, 0.5] };
        let (lp, _) = log_prob_and_entropy(&half, 0).unwrap();
        assert!((lp - 0.5_f64.ln()).abs() < 1e-15);

        assert!(log_prob_and_entropy(&half, 2).is_err());
    }

    #[test]
    fn flat_view_is_bijective() {
        let params = ParamSet::new(5, 3, 4, &[8, 8], 3);
        let flat = params.to_flat();
        assert_eq!(flat.len(), params.param_count());
        let mut other = ParamSet::new(5, 3, 4, &[8, 8], 99);
        other.set_flat(&flat).unwrap();
        assert_eq!(other, params);
    }

    #[test]
    fn quadratic_loss_gradient_equals_theta() {
        // loss = 0.5 ||theta||^2 has gradient theta; check via FD harness
        let params = ParamSet::new(2, 2, 2, &[3], 5);
        let fd = finite_difference_grad(
            &params,
            |p| 0.5 * p.to_flat().iter().map(|x| x * x).sum::<f64>(),
            1e-5,
        );
        for (g, t) in fd.iter().zip(params.to_flat()) {
            assert!((g - t).abs() < 1e-9);
        }
        // constant loss: zero gradient
        let fd = finite_difference_grad(&params, |_| 3.5, 1e-5);
        assert!(fd.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences_on_simple_scalar() {
        // scalar loss: sum of policy logits + value output
        let params = ParamSet::new(3, 2, 3, &[4], 11);
        let obs = [0.2, -0.4, 0.9];
        let state = [1.0, 0.5, -0.3];

        let mut grads = ParamGrads::zeros(&params);
        let pe = params.policy_eval(&obs).unwrap();
        params.policy_backward(&pe, &[1.0, 1.0], &mut grads);
        let ve = params.value_eval(&state).unwrap();
        params.value_backward(&ve, 1.0, &mut grads);
        let analytic = grads.to_flat();

        let fd = finite_difference_grad(
            &params,
            |p| {
                let pe = p.policy_eval(&obs).unwrap();
                let logits: f64 = pe.cache.output().iter().sum();
                logits + p.value_eval(&state).unwrap().value
            },
            1e-6,
        );
        for (a, f) in analytic.iter().zip(&fd) {
            assert!((a - f).abs() < 1e-7, "analytic {a} vs fd {f}");
        }
    }

    #[test]
    fn sgd_and_adam_steps() {
        let mut params = ParamSet::new(2, 2, 2, &[], 0);
        let n = params.param_count();
        let before = params.to_flat();

        // zero gradient: unchanged
        let mut state = OptimizerState::new(n);
        sgd_step(&mut params, &vec![0.0; n], 0.1, &OptimizerKind::Sgd, &mut state).unwrap();
        assert_eq!(params.to_flat(), before);

        // plain descent: theta' = theta - 0.1 g
        let grad: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        sgd_step(&mut params, &grad, 0.1, &OptimizerKind::Sgd, &mut state).unwrap();
        for i in 0..n {
            assert!((params.to_flat()[i] - (before[i] - 0.1 * grad[i])).abs() < 1e-15);
        }

        // Adam first step: m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
        let mut params = ParamSet::new(2, 2, 2, &[], 0);
        let before = params.to_flat();
        let mut state = OptimizerState::new(n);
        let kind = OptimizerKind::adam_default();
        sgd_step(&mut params, &grad, 0.01, &kind, &mut state).unwrap();
        for i in 0..n {
            let expected = if grad[i] == 0.0 {
                before[i]
            } else {
                before[i] - 0.01 * grad[i] / (grad[i].abs() + 1e-8)
            };
            assert!((params.to_flat()[i] - expected).abs() < 1e-12);
        }

        // non-finite gradient aborts without touching parameters
        let snapshot = params.to_flat();
        let mut bad = grad.clone();
        bad[1] = f64::NAN;
        assert!(matches!(
            sgd_step(&mut params, &bad, 0.1, &kind, &mut state),
            Err(ApproxError::NonFiniteGradient(1))
        ));
        assert_eq!(params.to_flat(), snapshot);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let params = ParamSet::new(4, 3, 5, &[8, 8], 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let restored = load_checkpoint(&path).unwrap();
        assert_eq!(restored, params);

        // corrupted magic rejected
        std::fs::write(&path, "not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
