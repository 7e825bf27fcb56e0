//! Surrogate objectives: the MARPO loss (clip term `L0` plus reflective term
//! `L1` under dynamic asymmetric bounds), the MAPPO baseline, the value
//! loss, and the fused loss/gradient evaluation used by the trainer.
//!
//! Sign convention: `l0`, `l1`, and `entropy` are recorded in maximization
//! form; the optimizer minimizes
//! `total = -(l0 + alpha * l1 + sigma * entropy) + value_coef * value_loss`.

use std::collections::HashMap;

use thiserror::Error;

use crate::approximator::{ApproxError, ParamGrads, ParamSet};
use crate::kl_clip::ClipBounds;
use crate::rollout::AdvantageBatch;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("alpha must be non-negative, got {0}")]
    InvalidAlpha(f64),
}

/// Log-ratio magnitudes above this are clamped before exponentiation.
pub const RATIO_LOG_CLAMP: f64 = 30.0;
/// Value loss coefficient `c_v`.
pub const VALUE_COEF: f64 = 0.5;

/// Importance ratio `exp(new - old)` with the log-difference clamped to
/// +-[`RATIO_LOG_CLAMP`] to guard against overflow.
pub fn ratio(new_log_prob: f64, old_log_prob: f64) -> f64 {
    ratio_flagged(new_log_prob, old_log_prob).0
}

fn ratio_flagged(new_log_prob: f64, old_log_prob: f64) -> (f64, bool) {
    let diff = new_log_prob - old_log_prob;
    let clamped = diff.abs() > RATIO_LOG_CLAMP;
    (diff.clamp(-RATIO_LOG_CLAMP, RATIO_LOG_CLAMP).exp(), clamped)
}

/// One agent-step as seen by the policy losses.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample {
    pub new_log_prob: f64,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub entropy: f64,
}

/// One reflective (k, k+1) pair.
#[derive(Debug, Clone, Copy)]
pub struct PairSample {
    pub new_log_prob_k: f64,
    pub old_log_prob_k: f64,
    pub new_log_prob_k1: f64,
    pub old_log_prob_k1: f64,
    pub adv_k: f64,
    pub adv_k1: f64,
}

/// Which advantage multiplies the unclipped branch of the reflective term.
/// The clipped branch always uses the next-step advantage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairAdvantage {
    /// Both branches use `A^{k+1}` (default; keeps the min comparable).
    NextStep,
    /// Unclipped branch uses `A^{k}` (the literal reading).
    LiteralCurrent,
}

/// Loss components (maximization sign for `l0`/`l1`/`entropy`) plus
/// training diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub l0: f64,
    pub l1: f64,
    pub entropy: f64,
    pub value_loss: f64,
    pub total: f64,
    pub measured_kl: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub clamped_ratios: usize,
}

impl LossBreakdown {
    fn assemble(l0: f64, l1: f64, entropy: f64, value_loss: f64, alpha: f64, sigma: f64) -> Self {
        Self {
            l0,
            l1,
            entropy,
            value_loss,
            total: -(l0 + alpha * l1 + sigma * entropy) + VALUE_COEF * value_loss,
            measured_kl: f64::NAN,
            clip_fraction: 0.0,
            mean_ratio: 0.0,
            clamped_ratios: 0,
        }
    }
}

/// The clip term: mean over samples of
/// `min(rho * A, clip(rho, x1, x2) * A)`.
pub fn l0_clip(samples: &[PolicySample], bounds: ClipBounds) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for s in samples {
        let rho = ratio(s.new_log_prob, s.old_log_prob);
        let unclipped = rho * s.advantage;
        let clipped = bounds.clip(rho) * s.advantage;
        total += unclipped.min(clipped);
    }
    total / samples.len() as f64
}

/// The reflective term: mean over pairs of
/// `min(rho_k * rho_{k+1} * A_sel, clip(rho_k) * clip(rho_{k+1}) * A^{k+1})`.
pub fn l1_clip(
    pairs: &[PairSample],
    bounds: ClipBounds,
    bounds_next: ClipBounds,
    mode: PairAdvantage,
) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for p in pairs {
        let rho_k = ratio(p.new_log_prob_k, p.old_log_prob_k);
        let rho_k1 = ratio(p.new_log_prob_k1, p.old_log_prob_k1);
        let adv_sel = match mode {
            PairAdvantage::NextStep => p.adv_k1,
            PairAdvantage::LiteralCurrent => p.adv_k,
        };
        let unclipped = rho_k * rho_k1 * adv_sel;
        let clipped = bounds.clip(rho_k) * bounds_next.clip(rho_k1) * p.adv_k1;
        total += unclipped.min(clipped);
    }
    total / pairs.len() as f64
}

/// Mean squared error between value predictions and GAE returns.
pub fn value_loss(predictions: &[f64], returns: &[f64]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    predictions
        .iter()
        .zip(returns)
        .map(|(v, r)| (v - r) * (v - r))
        .sum::<f64>()
        / predictions.len() as f64
}

/// The MAPPO baseline objective: symmetric PPO clip plus entropy bonus.
/// Implemented independently of [`marpo_loss`] so the degenerate-bounds
/// equivalence is a genuine cross-check.
pub fn mappo_loss(
    samples: &[PolicySample],
    epsilon: f64,
    sigma: f64,
) -> Result<LossBreakdown, LossError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(LossError::InvalidEpsilon(epsilon));
    }
    let n = samples.len().max(1) as f64;
    let lo = 1.0 - epsilon;
    let hi = 1.0 + epsilon;
    let mut policy_term = 0.0;
    let mut entropy = 0.0;
    let mut outside = 0usize;
    let mut ratio_sum = 0.0;
    for s in samples {
        let rho = ratio(s.new_log_prob, s.old_log_prob);
        let clipped_rho = rho.max(lo).min(hi);
        policy_term += (rho * s.advantage).min(clipped_rho * s.advantage);
        entropy += s.entropy;
        ratio_sum += rho;
        if rho < lo || rho > hi {
            outside += 1;
        }
    }
    let mut out =
        LossBreakdown::assemble(policy_term / n, 0.0, entropy / n, 0.0, 0.0, sigma);
    if !samples.is_empty() {
        out.clip_fraction = outside as f64 / n;
        out.mean_ratio = ratio_sum / n;
    }
    Ok(out)
}

/// The MARPO objective `L0 + alpha * L1` with dynamic asymmetric bounds and
/// the same entropy bonus as the baseline.
pub fn marpo_loss(
    samples: &[PolicySample],
    pairs: &[PairSample],
    bounds: ClipBounds,
    bounds_next: ClipBounds,
    alpha: f64,
    sigma: f64,
    mode: PairAdvantage,
) -> Result<LossBreakdown, LossError> {
    if !(alpha >= 0.0) {
        return Err(LossError::InvalidAlpha(alpha));
    }
    let l0 = l0_clip(samples, bounds);
    let l1 = if alpha == 0.0 { 0.0 } else { l1_clip(pairs, bounds, bounds_next, mode) };
    let n = samples.len().max(1) as f64;
    let entropy = samples.iter().map(|s| s.entropy).sum::<f64>() / n;
    let mut out = LossBreakdown::assemble(l0, l1, entropy, 0.0, alpha, sigma);
    if !samples.is_empty() {
        let mut outside = 0usize;
        let mut ratio_sum = 0.0;
        let mut clamped = 0usize;
        for s in samples {
            let (rho, was_clamped) = ratio_flagged(s.new_log_prob, s.old_log_prob);
            ratio_sum += rho;
            if !bounds.contains(rho) {
                outside += 1;
            }
            if was_clamped {
                clamped += 1;
            }
        }
        out.clip_fraction = outside as f64 / n;
        out.mean_ratio = ratio_sum / n;
        out.clamped_ratios = clamped;
    }
    Ok(out)
}

/// Loss settings shared by the trainer and the gradient path.
#[derive(Debug, Clone, Copy)]
pub struct LossSettings {
    pub alpha: f64,
    pub sigma: f64,
    pub value_coef: f64,
    pub pair_advantage: PairAdvantage,
}

pub struct MinibatchEval {
    pub breakdown: LossBreakdown,
    pub grad: Vec<f64>,
}

/// Current policy distributions for the given records (for true-KL
/// measurement against the stored old distributions).
pub fn policy_distributions(
    params: &ParamSet,
    batch: &AdvantageBatch,
    indices: &[usize],
) -> Result<Vec<Vec<f64>>, LossError> {
    indices
        .iter()
        .map(|&i| Ok(params.policy_eval(&batch.records[i].obs)?.probs))
        .collect()
}

/// Fused evaluation of the full minibatch objective and its exact
/// reverse-mode gradient over every parameter.
///
/// `min` and `clip` are piecewise linear; the subgradient follows the
/// active branch with ties resolved toward the unclipped branch.
pub fn eval_minibatch(
    params: &ParamSet,
    batch: &AdvantageBatch,
    indices: &[usize],
    bounds: ClipBounds,
    bounds_next: ClipBounds,
    settings: &LossSettings,
    with_grad: bool,
) -> Result<MinibatchEval, LossError> {
    let pairs =
        if settings.alpha != 0.0 { batch.pairs_for(indices) } else { Vec::new() };

    // forward passes over minibatch records plus pair successors
    let mut slot_of: HashMap<usize, usize> = HashMap::new();
    let mut needed: Vec<usize> = Vec::with_capacity(indices.len());
    for &i in indices {
        slot_of.entry(i).or_insert_with(|| {
            needed.push(i);
            needed.len() - 1
        });
    }
    if settings.alpha != 0.0 {
        for p in &pairs {
            slot_of.entry(p.k1).or_insert_with(|| {
                needed.push(p.k1);
                needed.len() - 1
            });
        }
    }

    let mut evals = Vec::with_capacity(needed.len());
    let mut log_probs = Vec::with_capacity(needed.len());
    let mut entropies = Vec::with_capacity(needed.len());
    for &rec_idx in &needed {
        let rec = &batch.records[rec_idx];
        let eval = params.policy_eval(&rec.obs)?;
        let lp = eval.probs[rec.action].ln();
        let mut ent = 0.0;
        for &p in &eval.probs {
            if p > 0.0 {
                ent -= p * p.ln();
            }
        }
        log_probs.push(lp);
        entropies.push(ent);
        evals.push(eval);
    }

    let samples: Vec<PolicySample> = indices
        .iter()
        .map(|&i| {
            let slot = slot_of[&i];
            PolicySample {
                new_log_prob: log_probs[slot],
                old_log_prob: batch.records[i].old_log_prob,
                advantage: batch.records[i].advantage,
                entropy: entropies[slot],
            }
        })
        .collect();
    let pair_samples: Vec<PairSample> = pairs
        .iter()
        .map(|p| PairSample {
            new_log_prob_k: log_probs[slot_of[&p.k]],
            old_log_prob_k: batch.records[p.k].old_log_prob,
            new_log_prob_k1: log_probs[slot_of[&p.k1]],
            old_log_prob_k1: batch.records[p.k1].old_log_prob,
            adv_k: p.adv_k,
            adv_k1: p.adv_k1,
        })
        .collect();

    let mut breakdown = marpo_loss(
        &samples,
        &pair_samples,
        bounds,
        bounds_next,
        settings.alpha,
        settings.sigma,
        settings.pair_advantage,
    )?;

    let value_evals: Vec<_> = indices
        .iter()
        .map(|&i| params.value_eval(&batch.records[i].global_state))
        .collect::<Result<_, _>>()?;
    let predictions: Vec<f64> = value_evals.iter().map(|v| v.value).collect();
    let returns: Vec<f64> = indices.iter().map(|&i| batch.records[i].ret).collect();
    let vloss = value_loss(&predictions, &returns);
    breakdown.value_loss = vloss;
    breakdown.total = -(breakdown.l0 + settings.alpha * breakdown.l1
        + settings.sigma * breakdown.entropy)
        + settings.value_coef * vloss;

    if !with_grad {
        return Ok(MinibatchEval { breakdown, grad: Vec::new() });
    }

    let n = indices.len() as f64;
    // d total / d log_prob coefficient per forward slot
    let mut d_logp = vec![0.0; needed.len()];
    // entropy bonus applies to minibatch records only
    let mut d_entropy = vec![0.0; needed.len()];

    for (&i, s) in indices.iter().zip(&samples) {
        let slot = slot_of[&i];
        let (rho, clamped) = ratio_flagged(s.new_log_prob, s.old_log_prob);
        let unclipped = rho * s.advantage;
        let clipped = bounds.clip(rho) * s.advantage;
        // tie (unclipped == clipped) takes the unclipped derivative
        if unclipped <= clipped && !clamped {
            d_logp[slot] += -(rho * s.advantage) / n;
        }
        d_entropy[slot] += -settings.sigma / n;
    }

    if settings.alpha != 0.0 && !pair_samples.is_empty() {
        let np = pair_samples.len() as f64;
        let w = settings.alpha / np;
        for (p, ps) in pairs.iter().zip(&pair_samples) {
            let (rho_k, clamp_k) = ratio_flagged(ps.new_log_prob_k, ps.old_log_prob_k);
            let (rho_k1, clamp_k1) = ratio_flagged(ps.new_log_prob_k1, ps.old_log_prob_k1);
            let adv_sel = match settings.pair_advantage {
                PairAdvantage::NextStep => ps.adv_k1,
                PairAdvantage::LiteralCurrent => ps.adv_k,
            };
            let unclipped = rho_k * rho_k1 * adv_sel;
            let clipped = bounds.clip(rho_k) * bounds_next.clip(rho_k1) * ps.adv_k1;
            let (slot_k, slot_k1) = (slot_of[&p.k], slot_of[&p.k1]);
            if unclipped <= clipped {
                if !clamp_k {
                    d_logp[slot_k] += -w * rho_k * rho_k1 * adv_sel;
                }
                if !clamp_k1 {
                    d_logp[slot_k1] += -w * rho_k * rho_k1 * adv_sel;
                }
            } else {
                if bounds.contains(rho_k) && !clamp_k {
                    d_logp[slot_k] += -w * rho_k * bounds_next.clip(rho_k1) * ps.adv_k1;
                }
                if bounds_next.contains(rho_k1) && !clamp_k1 {
                    d_logp[slot_k1] += -w * bounds.clip(rho_k) * rho_k1 * ps.adv_k1;
                }
            }
        }
    }

    let mut grads = ParamGrads::zeros(params);
    for (slot, &rec_idx) in needed.iter().enumerate() {
        let g_lp = d_logp[slot];
        let g_ent = d_entropy[slot];
        if g_lp == 0.0 && g_ent == 0.0 {
            continue;
        }
        let rec = &batch.records[rec_idx];
        let probs = &evals[slot].probs;
        let entropy = entropies[slot];
        let mut d_logits = vec![0.0; probs.len()];
        for (j, &pj) in probs.iter().enumerate() {
            // d log p_a / d z_j = delta_{ja} - p_j
            let indicator = if j == rec.action { 1.0 } else { 0.0 };
            let mut d = g_lp * (indicator - pj);
            // d S / d z_j = -p_j (ln p_j + S)
            if g_ent != 0.0 && pj > 0.0 {
                d += g_ent * (-pj * (pj.ln() + entropy));
            }
            d_logits[j] = d;
        }
        params.policy_backward(&evals[slot], &d_logits, &mut grads);
    }

    for ((ve, v), r) in value_evals.iter().zip(&predictions).zip(&returns) {
        let d = settings.value_coef * 2.0 * (v - r) / n;
        params.value_backward(ve, d, &mut grads);
    }

    Ok(MinibatchEval { breakdown, grad: grads.to_flat() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::{sgd_step, OptimizerKind, OptimizerState};
    use crate::env::make_env;
    use crate::rollout::{collect, AdvantageBatch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(rho: f64, advantage: f64) -> PolicySample {
        PolicySample {
            new_log_prob: rho.ln(),
            old_log_prob: 0.0,
            advantage,
            entropy: 0.0,
        }
    }

    fn pair(rho_k: f64, rho_k1: f64, adv_k: f64, adv_k1: f64) -> PairSample {
        PairSample {
            new_log_prob_k: rho_k.ln(),
            old_log_prob_k: 0.0,
            new_log_prob_k1: rho_k1.ln(),
            old_log_prob_k1: 0.0,
            adv_k,
            adv_k1,
        }
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(ratio(-1.2, -1.2), 1.0);
        assert!((ratio(1.5_f64.ln(), 0.0) - 1.5).abs() < 1e-15);
        // log-difference 50 clamps to exp(30)
        assert_eq!(ratio(50.0, 0.0), 30.0_f64.exp());
        assert!(ratio_flagged(50.0, 0.0).1);
        assert!(!ratio_flagged(1.0, 0.5).1);
    }

    #[test]
    fn l0_clip_examples() {
        let bounds = ClipBounds { lower: 0.8, upper: 1.2 };
        // all rho = 1: mean advantage exactly
        let samples = vec![sample(1.0, 2.0), sample(1.0, -1.0)];
        assert!((l0_clip(&samples, bounds) - 0.5).abs() < 1e-15);
        // rho = 1.5, A = 1: clipped branch wins the min
        assert!((l0_clip(&[sample(1.5, 1.0)], bounds) - 1.2).abs() < 1e-12);
        // rho = 1.5, A = -1: pessimistic unclipped branch
        assert!((l0_clip(&[sample(1.5, -1.0)], bounds) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn l1_clip_examples() {
        let bounds_a = ClipBounds { lower: 0.9, upper: 1.2 };
        assert_eq!(l1_clip(&[], bounds_a, bounds_a, PairAdvantage::NextStep), 0.0);

        let p = pair(1.1, 0.9, 0.0, 2.0);
        let got = l1_clip(&[p], bounds_a, bounds_a, PairAdvantage::NextStep);
        assert!((got - 1.98).abs() < 1e-12);

        let bounds_b = ClipBounds { lower: 0.8, upper: 1.2 };
        let p = pair(1.5, 1.5, 0.0, 1.0);
        let got = l1_clip(&[p], bounds_b, bounds_b, PairAdvantage::NextStep);
        assert!((got - 1.44).abs() < 1e-12);
    }

    #[test]
    fn mappo_loss_examples() {
        // sigma = 0, all rho = 1: policy term is the mean advantage
        let samples = vec![sample(1.0, 1.0), sample(1.0, 3.0)];
        let out = mappo_loss(&samples, 0.2, 0.0).unwrap();
        assert!((out.l0 - 2.0).abs() < 1e-15);
        assert_eq!(out.l1, 0.0);

        // entropy bonus: uniform 4-action policy, sigma = 0.01
        let mut s = sample(1.0, 0.0);
        s.entropy = 4.0_f64.ln();
        let out = mappo_loss(&[s], 0.2, 0.01).unwrap();
        assert!((out.total + 0.01 * 4.0_f64.ln()).abs() < 1e-15);

        // rho = 0.7, A = 1, eps = 0.2: min(0.7, 0.8) = 0.7
        let out = mappo_loss(&[sample(0.7, 1.0)], 0.2, 0.0).unwrap();
        assert!((out.l0 - 0.7).abs() < 1e-12);

        assert!(mappo_loss(&[], 0.0, 0.0).is_err());
        assert!(mappo_loss(&[], 1.0, 0.0).is_err());
    }

    #[test]
    fn marpo_reduces_to_mappo_with_symmetric_fixed_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(1..40);
            let samples: Vec<PolicySample> = (0..n)
                .map(|_| PolicySample {
                    new_log_prob: rng.gen_range(-3.0..0.0),
                    old_log_prob: rng.gen_range(-3.0..0.0),
                    advantage: rng.gen_range(-2.0..2.0),
                    entropy: rng.gen_range(0.0..1.4),
                })
                .collect();
            let pairs: Vec<PairSample> = (0..rng.gen_range(0..10))
                .map(|_| {
                    pair(
                        rng.gen_range(0.5..2.0),
                        rng.gen_range(0.5..2.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let bounds = ClipBounds::symmetric(0.2);
            let marpo =
                marpo_loss(&samples, &pairs, bounds, bounds, 0.0, 0.01, PairAdvantage::NextStep)
                    .unwrap();
            let mappo = mappo_loss(&samples, 0.2, 0.01).unwrap();
            assert!((marpo.total - mappo.total).abs() <= 1e-12);
            assert!((marpo.l0 - mappo.l0).abs() <= 1e-12);
            assert_eq!(marpo.l1, 0.0);
        }
    }

    #[test]
    fn marpo_alpha_composition() {
        // the two single-sample derived cases combine additively
        let bounds = ClipBounds { lower: 0.8, upper: 1.2 };
        let samples = [sample(1.5, 1.0)];
        let pairs = [pair(1.5, 1.5, 0.0, 1.0)];
        let out =
            marpo_loss(&samples, &pairs, bounds, bounds, 0.5, 0.0, PairAdvantage::NextStep)
                .unwrap();
        assert!((out.l0 - 1.2).abs() < 1e-12);
        assert!((out.l1 - 1.44).abs() < 1e-12);
        assert!((out.total + (1.2 + 0.5 * 1.44)).abs() < 1e-12);

        // alpha = 1 with empty pairs equals the alpha = 0 case
        let with_pairs =
            marpo_loss(&samples, &[], bounds, bounds, 1.0, 0.0, PairAdvantage::NextStep).unwrap();
        let without =
            marpo_loss(&samples, &[], bounds, bounds, 0.0, 0.0, PairAdvantage::NextStep).unwrap();
        assert_eq!(with_pairs.total, without.total);

        assert!(marpo_loss(&samples, &[], bounds, bounds, -0.1, 0.0, PairAdvantage::NextStep)
            .is_err());
    }

    #[test]
    fn value_loss_examples() {
        assert_eq!(value_loss(&[1.0, -2.0], &[1.0, -2.0]), 0.0);
        assert!((value_loss(&[0.0, 0.0], &[1.0, -1.0]) - 1.0).abs() < 1e-15);
        // quadratic in a uniform offset
        let base = value_loss(&[1.0, 1.0], &[0.0, 0.0]);
        let double = value_loss(&[2.0, 2.0], &[0.0, 0.0]);
        assert!((double - 4.0 * base).abs() < 1e-12);
    }

    #[test]
    fn pessimism_and_clip_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bounds = ClipBounds { lower: 0.85, upper: 1.3 };
        let samples: Vec<PolicySample> = (0..200)
            .map(|_| sample(rng.gen_range(0.4..2.5), rng.gen_range(-2.0..2.0)))
            .collect();
        // chosen branch never exceeds the unclipped value
        for s in &samples {
            let rho = ratio(s.new_log_prob, s.old_log_prob);
            let chosen = (rho * s.advantage).min(bounds.clip(rho) * s.advantage);
            assert!(chosen <= rho * s.advantage + 1e-15);
            if bounds.contains(rho) {
                assert_eq!(chosen, rho * s.advantage);
            }
        }
        let out =
            marpo_loss(&samples, &[], bounds, bounds, 0.0, 0.0, PairAdvantage::NextStep).unwrap();
        let brute = samples
            .iter()
            .filter(|s| {
                let rho = ratio(s.new_log_prob, s.old_log_prob);
                !bounds.contains(rho)
            })
            .count() as f64
            / samples.len() as f64;
        assert!((out.clip_fraction - brute).abs() < 1e-15);
        assert!(out.clip_fraction >= 0.0 && out.clip_fraction <= 1.0);
    }

    fn commit_batch(seed: u64) -> (ParamSet, AdvantageBatch) {
        let mut env = make_env("commit2").unwrap();
        let spec = env.spec();
        let params = ParamSet::new(spec.obs_dim, spec.action_count, spec.state_dim, &[8], seed);
        let trajs = collect(env.as_mut(), &params, 40, seed).unwrap();
        let batch = AdvantageBatch::build(&trajs, 0.99, 0.95, true).unwrap();
        (params, batch)
    }

    #[test]
    fn minibatch_gradient_matches_finite_differences() {
        let (old_params, batch) = commit_batch(5);
        // evaluate at parameters perturbed away from the data-collecting ones
        let mut params = old_params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1005);
        let flat: Vec<f64> =
            params.to_flat().iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
        params.set_flat(&flat).unwrap();

        let indices: Vec<usize> = (0..batch.records.len()).collect();
        let bounds = crate::kl_clip::solve_bounds(0.02).unwrap();
        let settings = LossSettings {
            alpha: 0.5,
            sigma: 0.01,
            value_coef: 0.5,
            pair_advantage: PairAdvantage::NextStep,
        };
        let eval =
            eval_minibatch(&params, &batch, &indices, bounds, bounds, &settings, true).unwrap();
        let fd = crate::approximator::finite_difference_grad(
            &params,
            |p| {
                eval_minibatch(p, &batch, &indices, bounds, bounds, &settings, false)
                    .unwrap()
                    .breakdown
                    .total
            },
            1e-5,
        );
        for (i, (a, f)) in eval.grad.iter().zip(&fd).enumerate() {
            let denom = a.abs().max(1e-8);
            assert!(
                (a - f).abs() / denom <= 1e-5,
                "coordinate {i}: analytic {a} vs fd {f}"
            );
        }
    }

    #[test]
    fn gradient_step_increases_positive_advantage_action() {
        // one positive-advantage sample with rho = 1: a step must raise
        // that action's probability
        let (params, mut batch) = commit_batch(6);
        batch.records.truncate(1);
        batch.pairs.clear();
        let rec_obs = batch.records[0].obs.clone();
        let action = batch.records[0].action;
        // rho = 1: old log prob equals current policy's log prob
        let eval = params.policy_eval(&rec_obs).unwrap();
        batch.records[0].old_log_prob = eval.probs[action].ln();
        batch.records[0].advantage = 1.0;

        let settings = LossSettings {
            alpha: 0.0,
            sigma: 0.0,
            value_coef: 0.0,
            pair_advantage: PairAdvantage::NextStep,
        };
        let bounds = ClipBounds::symmetric(0.2);
        let out = eval_minibatch(&params, &batch, &[0], bounds, bounds, &settings, true).unwrap();
        let mut stepped = params.clone();
        let mut state = OptimizerState::new(stepped.param_count());
        sgd_step(&mut stepped, &out.grad, 0.01, &OptimizerKind::Sgd, &mut state).unwrap();
        let before = params.policy_eval(&rec_obs).unwrap().probs[action];
        let after = stepped.policy_eval(&rec_obs).unwrap().probs[action];
        assert!(after > before, "{after} should exceed {before}");
    }

    #[test]
    fn zero_advantages_give_zero_policy_gradient() {
        let (params, mut batch) = commit_batch(7);
        for r in &mut batch.records {
            r.advantage = 0.0;
        }
        for p in &mut batch.pairs {
            p.adv_k = 0.0;
            p.adv_k1 = 0.0;
        }
        let indices: Vec<usize> = (0..batch.records.len()).collect();
        let settings = LossSettings {
            alpha: 0.5,
            sigma: 0.0,
            value_coef: 0.0,
            pair_advantage: PairAdvantage::NextStep,
        };
        let bounds = ClipBounds::symmetric(0.2);
        let out =
            eval_minibatch(&params, &batch, &indices, bounds, bounds, &settings, true).unwrap();
        assert!(out.grad.iter().all(|&g| g == 0.0));
        assert_eq!(out.breakdown.l0, 0.0);
        assert_eq!(out.breakdown.l1, 0.0);
    }
}
