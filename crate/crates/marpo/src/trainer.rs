//! The training loop: rollout collection, advantage estimation, KL-driven
//! bound adaptation, minibatch optimization, and greedy evaluation.

use std::time::Instant;

use thiserror::Error;

use crate::approximator::{
    sgd_step, ActionDistribution, ApproxError, OptimizerKind, OptimizerState, ParamSet,
};
use crate::config::{Algorithm, ConfigError, TrainConfig};
use crate::derive_seed;
use crate::env::{make_env, Env, EnvError};
use crate::kl_clip::{kl_discrete, solve_bounds, ClipBounds, KlControllerState, KlError};
use crate::losses::{
    eval_minibatch, policy_distributions, LossError, LossSettings, VALUE_COEF,
};
use crate::metrics::MetricsRow;
use crate::rollout::{collect, env_step_count, minibatches, AdvantageBatch, RolloutError};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Kl(#[from] KlError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
}

/// Hidden layer widths for both networks.
pub const HIDDEN: [usize; 2] = [64, 64];
/// Consecutive non-finite updates tolerated before aborting a run.
const MAX_BAD_UPDATES: usize = 3;

#[derive(Debug, Clone, Copy)]
pub struct EvalResult {
    pub mean_return: f64,
    pub win_rate: f64,
}

/// Everything a finished (or aborted) run produced.
pub struct RunReport {
    pub rows: Vec<MetricsRow>,
    pub final_eval: EvalResult,
    pub params: ParamSet,
    pub aborted: bool,
    pub env_steps: usize,
}

/// Greedy-policy evaluation: argmax actions, undiscounted returns, win =
/// the environment's optimality flag on the final step.
pub fn evaluate(
    env: &mut dyn Env,
    params: &ParamSet,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult, TrainerError> {
    let spec = env.spec();
    let mut total_return = 0.0;
    let mut wins = 0usize;
    for ep in 0..episodes {
        let (mut observations, _state) = env.reset(derive_seed(seed, 4, ep as u64));
        let mut ep_return = 0.0;
        loop {
            let joint: Vec<usize> = (0..spec.n_agents)
                .map(|a| {
                    let eval = params.policy_eval(&observations[a])?;
                    Ok(ActionDistribution { probs: eval.probs }.argmax())
                })
                .collect::<Result<_, TrainerError>>()?;
            let step = env.step(&joint)?;
            ep_return += step.reward;
            if step.done {
                if step.optimal {
                    wins += 1;
                }
                break;
            }
            observations = step.observations;
        }
        total_return += ep_return;
    }
    let n = episodes.max(1) as f64;
    Ok(EvalResult { mean_return: total_return / n, win_rate: wins as f64 / n })
}

fn measured_kl_over(
    params: &ParamSet,
    batch: &AdvantageBatch,
    indices: &[usize],
) -> Result<f64, TrainerError> {
    let dists = policy_distributions(params, batch, indices)?;
    let mut total = 0.0;
    for (&i, new_dist) in indices.iter().zip(&dists) {
        total += kl_discrete(&batch.records[i].old_distribution, new_dist)?;
    }
    Ok(total / indices.len().max(1) as f64)
}

/// Runs a full training job described by `config`. Returns an aborted
/// report (rather than an error) if optimization diverges into non-finite
/// gradients [`MAX_BAD_UPDATES`] minibatches in a row.
pub fn train(config: &TrainConfig) -> Result<RunReport, TrainerError> {
    config.validate()?;
    let start = Instant::now();
    let mut env = make_env(&config.env_name)?;
    let spec = env.spec();
    let mut params = ParamSet::new(
        spec.obs_dim,
        spec.action_count,
        spec.state_dim,
        &HIDDEN,
        derive_seed(config.seed, 0, 0),
    );
    let mut opt_state = OptimizerState::new(params.param_count());
    let opt_kind = OptimizerKind::adam_default();

    // MAPPO always uses fixed symmetric bounds; MARPO may opt into them.
    let fixed_bounds = match config.algorithm {
        Algorithm::Mappo => Some(ClipBounds::symmetric(config.baseline_epsilon)),
        Algorithm::Marpo => config.fixed_clip.map(ClipBounds::symmetric),
    };
    let alpha = match config.algorithm {
        Algorithm::Mappo => 0.0,
        Algorithm::Marpo => config.alpha,
    };
    let settings = LossSettings {
        alpha,
        sigma: config.sigma,
        value_coef: VALUE_COEF,
        pair_advantage: config.pair_advantage(),
    };
    let mut controller = KlControllerState::new(config.beta, config.kl_bias)?;

    let mut rows = Vec::with_capacity(config.iterations);
    let mut env_steps = 0usize;
    let mut bad_updates = 0usize;
    let mut aborted = false;
    let mut last_eval = EvalResult { mean_return: f64::NAN, win_rate: f64::NAN };

    'outer: for it in 0..config.iterations {
        let trajs = collect(
            env.as_mut(),
            &params,
            config.rollout_steps,
            derive_seed(config.seed, 2, it as u64),
        )?;
        env_steps += env_step_count(&trajs, spec.n_agents);
        let batch = AdvantageBatch::build(
            &trajs,
            config.gamma,
            config.lambda,
            config.normalize_advantages,
        )?;

        let mut last = None;
        for epoch in 0..config.epochs {
            let shuffle_seed =
                derive_seed(config.seed, 3, (it * config.epochs + epoch) as u64);
            for indices in minibatches(&batch, config.minibatch_size, shuffle_seed)? {
                let measured = measured_kl_over(&params, &batch, &indices)?;
                let (bounds, target) = match fixed_bounds {
                    Some(b) => (b, f64::NAN),
                    None => {
                        controller = controller.ema_update(measured)?;
                        let target = controller.target_kl();
                        (solve_bounds(target)?, target)
                    }
                };
                let bounds_next = match (fixed_bounds, config.second_kl_scale) {
                    (None, Some(scale)) => solve_bounds(target * scale)?,
                    _ => bounds,
                };
                let eval = eval_minibatch(
                    &params, &batch, &indices, bounds, bounds_next, &settings, true,
                )?;
                match sgd_step(
                    &mut params,
                    &eval.grad,
                    config.learning_rate,
                    &opt_kind,
                    &mut opt_state,
                ) {
                    Ok(()) => bad_updates = 0,
                    Err(_) => {
                        bad_updates += 1;
                        if bad_updates >= MAX_BAD_UPDATES {
                            aborted = true;
                        }
                    }
                }
                let mut b = eval.breakdown;
                b.measured_kl = measured;
                last = Some((b, bounds, target));
                if aborted {
                    break;
                }
            }
            if aborted {
                break;
            }
        }

        if (it + 1) % config.eval_interval == 0 || it + 1 == config.iterations || aborted {
            last_eval =
                evaluate(env.as_mut(), &params, config.eval_episodes, derive_seed(config.seed, 5, it as u64))?;
        }
        let (b, bounds, target) = last.expect("at least one minibatch per iteration");
        rows.push(MetricsRow {
            iteration: it,
            env_steps,
            mean_return: last_eval.mean_return,
            win_rate: last_eval.win_rate,
            measured_kl: b.measured_kl,
            target_kl: target,
            bound_lower: bounds.lower,
            bound_upper: bounds.upper,
            clip_fraction: b.clip_fraction,
            l0: b.l0,
            l1: b.l1,
            entropy: b.entropy,
            value_loss: b.value_loss,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if aborted {
            break 'outer;
        }
    }

    Ok(RunReport { rows, final_eval: last_eval, params, aborted, env_steps })
}
