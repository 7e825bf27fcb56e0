//! KL-divergence machinery behind the dynamic asymmetric clipping range.
//!
//! The estimator `f(x) = x - 1 - ln x` is non-negative, convex, and its
//! expectation under the old policy equals the exact KL divergence between
//! old and new policies. Solving `f(x) = d` for a target KL `d` yields two
//! roots `x1 < 1 < x2` that replace PPO's fixed symmetric `1 ± eps` clip
//! interval. The target itself is tracked by an exponential moving average
//! of measured KL, floored by a bias so it never collapses to zero.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KlError {
    #[error("input must be positive and finite, got {0}")]
    NonPositive(f64),
    #[error("distribution lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("distribution entry {idx} is negative: {mass}")]
    NegativeMass { idx: usize, mass: f64 },
    #[error("distribution sums to {0}, expected 1 within 1e-9")]
    Unnormalized(f64),
    #[error("support mismatch: p[{0}] > 0 where q[{0}] = 0")]
    SupportMismatch(usize),
    #[error("empty input")]
    Empty,
    #[error("invalid KL target: {0}")]
    InvalidTarget(f64),
    #[error("measured KL must be non-negative and finite, got {0}")]
    InvalidMeasurement(f64),
    #[error("beta must lie in [0, 1), got {0}")]
    InvalidBeta(f64),
    #[error("kl_bias must be non-negative and finite, got {0}")]
    InvalidBias(f64),
}

/// Distributions must sum to 1 within this tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Residual tolerance the root solver guarantees: `|f(root) - target|`.
pub const ROOT_RESIDUAL_TOL: f64 = 1e-10;

/// The unbiased KL estimator `f(x) = x - 1 - ln x` for a probability ratio
/// `x = pi_new / pi_old`. Zero exactly at `x = 1`, positive elsewhere.
pub fn f_estimator(x: f64) -> Result<f64, KlError> {
    if !x.is_finite() || x <= 0.0 {
        return Err(KlError::NonPositive(x));
    }
    Ok(f_raw(x))
}

// ln_1p formulation avoids cancellation between `x - 1` and `ln x` near 1,
// which is where the solver operates for small targets.
fn f_raw(x: f64) -> f64 {
    let e = x - 1.0;
    if e.abs() < 0.5 {
        e - e.ln_1p()
    } else {
        e - x.ln()
    }
}

fn validate_distribution(p: &[f64]) -> Result<(), KlError> {
    if p.is_empty() {
        return Err(KlError::Empty);
    }
    let mut sum = 0.0;
    for (idx, &mass) in p.iter().enumerate() {
        if !(mass >= 0.0) {
            return Err(KlError::NegativeMass { idx, mass });
        }
        sum += mass;
    }
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(KlError::Unnormalized(sum));
    }
    Ok(())
}

/// Discrete KL divergence `KL(p || q) = sum p ln(p/q)` in nats, with the
/// convention `0 ln(0/q) = 0`.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64, KlError> {
    if p.len() != q.len() {
        return Err(KlError::LengthMismatch(p.len(), q.len()));
    }
    validate_distribution(p)?;
    validate_distribution(q)?;
    let mut total = 0.0;
    for (idx, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(KlError::SupportMismatch(idx));
            }
            total += pi * (pi / qi).ln();
        }
    }
    // round-off can leave a tiny negative residue for near-identical
    // distributions; the true value is non-negative (Gibbs' inequality)
    Ok(total.max(0.0))
}

/// Total-variation distance `0.5 sum |p - q|`. Diagnostic only.
pub fn tv_discrete(p: &[f64], q: &[f64]) -> Result<f64, KlError> {
    if p.len() != q.len() {
        return Err(KlError::LengthMismatch(p.len(), q.len()));
    }
    validate_distribution(p)?;
    validate_distribution(q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// True KL between stored old policy distributions and current ones,
/// averaged over sampled agent-timesteps.
pub fn measured_kl(old_dists: &[Vec<f64>], new_dists: &[Vec<f64>]) -> Result<f64, KlError> {
    if old_dists.is_empty() || new_dists.is_empty() {
        return Err(KlError::Empty);
    }
    if old_dists.len() != new_dists.len() {
        return Err(KlError::LengthMismatch(old_dists.len(), new_dists.len()));
    }
    let mut total = 0.0;
    for (p, q) in old_dists.iter().zip(new_dists) {
        total += kl_discrete(p, q)?;
    }
    Ok(total / old_dists.len() as f64)
}

/// EMA-tracked KL target with a lower floor (`kl_bias`) that keeps the
/// clipping range from collapsing when measured KL stays near zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlControllerState {
    target_kl: f64,
    beta: f64,
    kl_bias: f64,
}

impl KlControllerState {
    /// New controller; the target starts at the floor so early updates are
    /// tight and loosen only once measured KL arrives.
    pub fn new(beta: f64, kl_bias: f64) -> Result<Self, KlError> {
        if !(0.0..1.0).contains(&beta) {
            return Err(KlError::InvalidBeta(beta));
        }
        if !kl_bias.is_finite() || kl_bias < 0.0 {
            return Err(KlError::InvalidBias(kl_bias));
        }
        Ok(Self { target_kl: kl_bias, beta, kl_bias })
    }

    /// Controller at an explicit target (floored by the bias).
    pub fn with_target(beta: f64, kl_bias: f64, target: f64) -> Result<Self, KlError> {
        let mut state = Self::new(beta, kl_bias)?;
        if !target.is_finite() || target < 0.0 {
            return Err(KlError::InvalidTarget(target));
        }
        state.target_kl = target.max(kl_bias);
        Ok(state)
    }

    pub fn target_kl(&self) -> f64 {
        self.target_kl
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kl_bias(&self) -> f64 {
        self.kl_bias
    }

    /// `target' = max(kl_bias, beta * target + (1 - beta) * measured)`.
    pub fn ema_update(&self, measured: f64) -> Result<Self, KlError> {
        if !measured.is_finite() || measured < 0.0 {
            return Err(KlError::InvalidMeasurement(measured));
        }
        let target = (self.beta * self.target_kl + (1.0 - self.beta) * measured).max(self.kl_bias);
        Ok(Self { target_kl: target, ..*self })
    }
}

/// Asymmetric clipping interval `[lower, upper]` with `lower <= 1 <= upper`,
/// the two roots of `f(x) = target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ClipBounds {
    /// PPO-style symmetric interval `[1 - eps, 1 + eps]`.
    pub fn symmetric(eps: f64) -> Self {
        Self { lower: 1.0 - eps, upper: 1.0 + eps }
    }

    pub fn clip(&self, ratio: f64) -> f64 {
        ratio.max(self.lower).min(self.upper)
    }

    pub fn contains(&self, ratio: f64) -> bool {
        ratio >= self.lower && ratio <= self.upper
    }
}

/// Solves `f(x) = target` for the two roots bracketing 1.
///
/// `f` is strictly decreasing on `(0, 1]` and strictly increasing on
/// `[1, inf)`, so each side is solved by bracketed bisection followed by a
/// short Newton polish. Residuals are within [`ROOT_RESIDUAL_TOL`].
pub fn solve_bounds(target: f64) -> Result<ClipBounds, KlError> {
    if !target.is_finite() || target < 0.0 {
        return Err(KlError::InvalidTarget(target));
    }
    if target == 0.0 {
        return Ok(ClipBounds { lower: 1.0, upper: 1.0 });
    }
    let mut lo = 0.5;
    while f_raw(lo) <= target {
        lo *= 0.5;
        if lo < f64::EPSILON * 10.0 {
            break;
        }
    }
    let lower = refine_root(lo, 1.0, target);
    let mut hi = 2.0;
    while f_raw(hi) <= target {
        hi *= 2.0;
    }
    let upper = refine_root(1.0, hi, target);
    Ok(ClipBounds { lower, upper })
}

fn refine_root(mut a: f64, mut b: f64, target: f64) -> f64 {
    // Sign of f - target at `a` is constant per side; bisect to machine width.
    let ga_pos = f_raw(a) - target > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a.min(b) || mid >= a.max(b) {
            break;
        }
        if (f_raw(mid) - target > 0.0) == ga_pos {
            a = mid;
        } else {
            b = mid;
        }
    }
    let mut x = 0.5 * (a + b);
    // Newton polish; f'(x) = 1 - 1/x is bounded away from zero at the root.
    for _ in 0..3 {
        let fp = 1.0 - 1.0 / x;
        if fp == 0.0 {
            break;
        }
        let next = x - (f_raw(x) - target) / fp;
        if next.is_finite() && next > 0.0 {
            x = next;
        } else {
            break;
        }
    }
    x
}
