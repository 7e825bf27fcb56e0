//! Built-in diagnostics runnable from the CLI: fast numerical property
//! checks over the estimator, the bound solver, the gradient path, and the
//! baseline-reduction identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approximator::{finite_difference_grad, ParamSet};
use crate::env::make_env;
use crate::kl_clip::{f_estimator, kl_discrete, solve_bounds, ClipBounds};
use crate::losses::{
    eval_minibatch, mappo_loss, marpo_loss, PairAdvantage, LossSettings, PolicySample,
};
use crate::rollout::{collect, AdvantageBatch};

pub struct SelfTestReport {
    /// (check name, passed) in execution order.
    pub results: Vec<(String, bool)>,
}

impl SelfTestReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|(_, ok)| *ok)
    }
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Unbiasedness of the ratio-based estimator: for random discrete pairs
/// (p, q), `E_p[f(q/p)]` reproduces `KL(p || q)` to double precision.
fn check_unbiasedness() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_0001);
    for _ in 0..300 {
        let n = rng.gen_range(2..8);
        let p = random_distribution(&mut rng, n);
        let q = random_distribution(&mut rng, n);
        let expectation: f64 = p
            .iter()
            .zip(&q)
            .map(|(&pi, &qi)| pi * f_estimator(qi / pi).unwrap())
            .sum();
        let direct = kl_discrete(&p, &q).unwrap();
        if (expectation - direct).abs() > 1e-12 {
            return false;
        }
    }
    true
}

/// Bound solving: residual below 1e-10 at both roots, bracketing 1, and
/// asymmetry favoring the upper side.
fn check_roots() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_0002);
    for _ in 0..300 {
        let target = 10f64.powf(rng.gen_range(-8.0..0.3));
        let b = match solve_bounds(target) {
            Ok(b) => b,
            Err(_) => return false,
        };
        let residual = |x: f64| (f_estimator(x).unwrap() - target).abs();
        if residual(b.lower) > 1e-10 || residual(b.upper) > 1e-10 {
            return false;
        }
        if !(b.lower < 1.0 && b.upper > 1.0) {
            return false;
        }
        if !((1.0 - b.lower) < (b.upper - 1.0)) {
            return false;
        }
    }
    true
}

/// Analytic minibatch gradients against central finite differences.
/// `perturbation` is added to every analytic coordinate first, so a nonzero
/// value must make this check fail (harness self-validation).
fn check_gradients(perturbation: f64) -> bool {
    let mut env = match make_env("commit2") {
        Ok(e) => e,
        Err(_) => return false,
    };
    let spec = env.spec();
    let params = ParamSet::new(spec.obs_dim, spec.action_count, spec.state_dim, &[8], 0x5e1f);
    let trajs = match collect(env.as_mut(), &params, 24, 0x5e1f) {
        Ok(t) => t,
        Err(_) => return false,
    };
    let batch = match AdvantageBatch::build(&trajs, 0.99, 0.95, true) {
        Ok(b) => b,
        Err(_) => return false,
    };
    let mut eval_params = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_0003);
    let flat: Vec<f64> =
        eval_params.to_flat().iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
    if eval_params.set_flat(&flat).is_err() {
        return false;
    }
    let indices: Vec<usize> = (0..batch.records.len()).collect();
    let bounds = match solve_bounds(0.02) {
        Ok(b) => b,
        Err(_) => return false,
    };
    let settings = LossSettings {
        alpha: 0.5,
        sigma: 0.01,
        value_coef: 0.5,
        pair_advantage: PairAdvantage::NextStep,
    };
    let eval = match eval_minibatch(&eval_params, &batch, &indices, bounds, bounds, &settings, true)
    {
        Ok(e) => e,
        Err(_) => return false,
    };
    let fd = finite_difference_grad(
        &eval_params,
        |p| {
            eval_minibatch(p, &batch, &indices, bounds, bounds, &settings, false)
                .map(|e| e.breakdown.total)
                .unwrap_or(f64::NAN)
        },
        1e-5,
    );
    eval.grad.iter().zip(&fd).all(|(a, f)| {
        let a = a + perturbation;
        (a - f).abs() / a.abs().max(1e-8) <= 1e-5
    })
}

/// MARPO with fixed symmetric bounds and `alpha = 0` reproduces the MAPPO
/// objective value on random inputs.
fn check_reduction() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_0004);
    for _ in 0..300 {
        let n = rng.gen_range(1..30);
        let samples: Vec<PolicySample> = (0..n)
            .map(|_| PolicySample {
                new_log_prob: rng.gen_range(-3.0..0.0),
                old_log_prob: rng.gen_range(-3.0..0.0),
                advantage: rng.gen_range(-2.0..2.0),
                entropy: rng.gen_range(0.0..1.4),
            })
            .collect();
        let eps = rng.gen_range(0.05..0.5);
        let bounds = ClipBounds::symmetric(eps);
        let marpo =
            match marpo_loss(&samples, &[], bounds, bounds, 0.0, 0.01, PairAdvantage::NextStep) {
                Ok(v) => v,
                Err(_) => return false,
            };
        let mappo = match mappo_loss(&samples, eps, 0.01) {
            Ok(v) => v,
            Err(_) => return false,
        };
        if (marpo.total - mappo.total).abs() > 1e-12 {
            return false;
        }
    }
    true
}

/// Runs every diagnostic. `grad_perturbation` (normally 0) is injected into
/// the gradient check so the harness itself can be exercised.
pub fn run_selftest(grad_perturbation: f64) -> SelfTestReport {
    let results = vec![
        ("kl-estimator-unbiasedness".to_string(), check_unbiasedness()),
        ("clip-bound-roots".to_string(), check_roots()),
        ("minibatch-gradients".to_string(), check_gradients(grad_perturbation)),
        ("baseline-reduction".to_string(), check_reduction()),
    ];
    SelfTestReport { results }
}
