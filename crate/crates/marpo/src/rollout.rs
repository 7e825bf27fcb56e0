//! Trajectory collection, GAE advantage/return computation, reflective-pair
//! construction, and minibatch assembly.
//!
//! A [`Trajectory`] holds one agent's transitions for one episode. Batches
//! flatten every agent-step into [`BatchRecord`]s; consecutive same-agent
//! steps become [`ReflectivePair`]s feeding the reflective loss term, and
//! pairs never straddle episode boundaries by construction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::approximator::{value_forward, ApproxError, ParamSet};
use crate::derive_seed;
use crate::env::{Env, EnvError};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error("gamma must lie in [0, 1], got {0}")]
    InvalidGamma(f64),
    #[error("lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("minibatch size must be >= 1")]
    InvalidMinibatchSize,
    #[error("empty batch")]
    EmptyBatch,
}

/// One agent-env step: everything the losses need later, including the full
/// old action distribution for true-KL measurement.
#[derive(Debug, Clone)]
pub struct Transition {
    pub agent_id: usize,
    pub step_index: usize,
    pub obs: Vec<f64>,
    pub action: usize,
    pub old_log_prob: f64,
    pub old_distribution: Vec<f64>,
    pub reward: f64,
    pub value_estimate: f64,
    pub done: bool,
    pub global_state: Vec<f64>,
}

/// One agent's transitions for one episode, plus the critic bootstrap value
/// used when the episode was truncated rather than terminated (0 at a
/// terminal step).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub agent_id: usize,
    pub steps: Vec<Transition>,
    pub bootstrap_value: f64,
}

/// Collects complete episodes until at least `n_steps` env steps are
/// gathered. Actions are sampled from the current policy with seeded
/// randomness; per-episode reset seeds derive from `seed`.
pub fn collect(
    env: &mut dyn Env,
    params: &ParamSet,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, RolloutError> {
    let spec = env.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xac710, 0));
    let mut trajectories = Vec::new();
    let mut env_steps = 0usize;
    let mut episode = 0u64;

    while env_steps < n_steps {
        let (mut obs, mut state) = env.reset(derive_seed(seed, 1, episode));
        episode += 1;
        let mut agent_steps: Vec<Vec<Transition>> = vec![Vec::new(); spec.n_agents];
        let mut step_index = 0usize;
        loop {
            let value = value_forward(params, &state)?;
            let mut joint = Vec::with_capacity(spec.n_agents);
            let mut per_agent = Vec::with_capacity(spec.n_agents);
            for agent_obs in obs.iter() {
                let eval = params.policy_eval(agent_obs)?;
                let u: f64 = rng.gen();
                let action = pick_action(&eval.probs, u);
                per_agent.push((eval.probs, action));
                joint.push(action);
            }
            let result = env.step(&joint)?;
            env_steps += 1;
            for (agent_id, (probs, action)) in per_agent.into_iter().enumerate() {
                agent_steps[agent_id].push(Transition {
                    agent_id,
                    step_index,
                    obs: obs[agent_id].clone(),
                    action,
                    old_log_prob: probs[action].ln(),
                    old_distribution: probs,
                    reward: result.reward,
                    value_estimate: value,
                    done: result.done,
                    global_state: state.clone(),
                });
            }
            step_index += 1;
            if result.done {
                break;
            }
            obs = result.observations;
            state = result.global_state;
        }
        for (agent_id, steps) in agent_steps.into_iter().enumerate() {
            trajectories.push(Trajectory { agent_id, steps, bootstrap_value: 0.0 });
        }
    }
    Ok(trajectories)
}

fn pick_action(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Number of env steps represented by a set of trajectories.
pub fn env_step_count(trajectories: &[Trajectory], n_agents: usize) -> usize {
    trajectories.iter().map(|t| t.steps.len()).sum::<usize>() / n_agents
}

/// GAE over one trajectory:
/// `delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)`,
/// `A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}` backward,
/// returns `= A + V`. The value after the last step is the trajectory's
/// bootstrap value (0 at a terminal step).
pub fn gae(
    trajectory: &Trajectory,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), RolloutError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(RolloutError::InvalidGamma(gamma));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(RolloutError::InvalidLambda(lambda));
    }
    let steps = &trajectory.steps;
    let n = steps.len();
    let mut advantages = vec![0.0; n];
    let mut returns = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let not_done = if steps[t].done { 0.0 } else { 1.0 };
        let next_value =
            if t + 1 < n { steps[t + 1].value_estimate } else { trajectory.bootstrap_value };
        let delta =
            steps[t].reward + gamma * next_value * not_done - steps[t].value_estimate;
        next_adv = delta + gamma * lambda * not_done * next_adv;
        advantages[t] = next_adv;
        returns[t] = next_adv + steps[t].value_estimate;
    }
    Ok((advantages, returns))
}

/// One flattened agent-step with its GAE outputs.
#[derive(Debug, Clone)]
pub struct BatchRecord {
    pub agent_id: usize,
    pub obs: Vec<f64>,
    pub action: usize,
    pub old_log_prob: f64,
    pub old_distribution: Vec<f64>,
    pub global_state: Vec<f64>,
    pub advantage: f64,
    pub ret: f64,
}

/// The (k, k+1) reflective pair for one agent, as indices into the batch
/// records plus the (possibly normalized) advantages at both steps.
#[derive(Debug, Clone, Copy)]
pub struct ReflectivePair {
    pub k: usize,
    pub k1: usize,
    pub adv_k: f64,
    pub adv_k1: f64,
}

/// Flattened per-agent-step records with advantages, returns, and
/// reflective-pair links.
#[derive(Debug, Clone)]
pub struct AdvantageBatch {
    pub records: Vec<BatchRecord>,
    pub pairs: Vec<ReflectivePair>,
    /// `pair_of_k[i]` is the index into `pairs` whose step-k record is `i`.
    pair_of_k: Vec<Option<usize>>,
    pub norm_mean: f64,
    pub norm_std: f64,
}

impl AdvantageBatch {
    /// Computes GAE per trajectory, flattens records, builds consecutive
    /// pairs, and (optionally) normalizes advantages over the whole batch.
    pub fn build(
        trajectories: &[Trajectory],
        gamma: f64,
        lambda: f64,
        normalize: bool,
    ) -> Result<Self, RolloutError> {
        let mut records = Vec::new();
        let mut pairs = Vec::new();
        for traj in trajectories {
            let (advantages, returns) = gae(traj, gamma, lambda)?;
            let base = records.len();
            for (t, step) in traj.steps.iter().enumerate() {
                records.push(BatchRecord {
                    agent_id: step.agent_id,
                    obs: step.obs.clone(),
                    action: step.action,
                    old_log_prob: step.old_log_prob,
                    old_distribution: step.old_distribution.clone(),
                    global_state: step.global_state.clone(),
                    advantage: advantages[t],
                    ret: returns[t],
                });
            }
            for t in 0..traj.steps.len().saturating_sub(1) {
                // terminal step k cannot open a pair
                if traj.steps[t].done {
                    continue;
                }
                pairs.push(ReflectivePair {
                    k: base + t,
                    k1: base + t + 1,
                    adv_k: advantages[t],
                    adv_k1: advantages[t + 1],
                });
            }
        }
        if records.is_empty() {
            return Err(RolloutError::EmptyBatch);
        }

        let mut mean = 0.0;
        let mut std = 1.0;
        if normalize && records.len() >= 2 {
            mean = records.iter().map(|r| r.advantage).sum::<f64>() / records.len() as f64;
            let var = records.iter().map(|r| (r.advantage - mean).powi(2)).sum::<f64>()
                / records.len() as f64;
            if var > 1e-12 {
                std = var.sqrt();
                for r in &mut records {
                    r.advantage = (r.advantage - mean) / std;
                }
                for p in &mut pairs {
                    p.adv_k = (p.adv_k - mean) / std;
                    p.adv_k1 = (p.adv_k1 - mean) / std;
                }
            } else {
                mean = 0.0;
            }
        }

        let mut pair_of_k = vec![None; records.len()];
        for (idx, p) in pairs.iter().enumerate() {
            pair_of_k[p.k] = Some(idx);
        }
        Ok(Self { records, pairs, pair_of_k, norm_mean: mean, norm_std: std })
    }

    /// Reflective pairs whose step-k record belongs to the given minibatch.
    pub fn pairs_for(&self, indices: &[usize]) -> Vec<ReflectivePair> {
        indices
            .iter()
            .filter_map(|&i| self.pair_of_k[i].map(|p| self.pairs[p]))
            .collect()
    }
}

/// Seeded shuffle then contiguous slices; every record appears exactly once
/// per epoch. A size larger than the dataset yields one full batch.
pub fn minibatches(
    batch: &AdvantageBatch,
    size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, RolloutError> {
    if size == 0 {
        return Err(RolloutError::InvalidMinibatchSize);
    }
    let mut indices: Vec<usize> = (0..batch.records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    Ok(indices.chunks(size).map(|c| c.to_vec()).collect())
}

/// One record per line, tab-separated, for offline inspection.
/// Columns: agent_id, step_index, action, reward, value, old_log_prob,
/// done, obs components.
pub fn write_trajectory_dump(
    trajectories: &[Trajectory],
    out: &mut impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(out, "agent_id\tstep_index\taction\treward\tvalue\told_log_prob\tdone\tobs")?;
    for traj in trajectories {
        for s in &traj.steps {
            let obs = s
                .obs
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(",");
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.agent_id,
                s.step_index,
                s.action,
                s.reward,
                s.value_estimate,
                s.old_log_prob,
                s.done as u8,
                obs
            )?;
        }
    }
    Ok(())
}
