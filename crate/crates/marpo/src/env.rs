//! Dec-POMDP environment interface and three deterministic toy cooperative
//! games with closed-form optima.
//!
//! - `matrix`: one-shot 2-agent matrix game, payoff `[[1.0, 0.0], [0.0, 0.5]]`.
//! - `commit2`: two-step commit/execute game whose payoff arrives one step
//!   after the coordinated decision, the designed stressor for the
//!   reflective loss term.
//! - `spread`: 5x5 grid with 3 agents covering 3 landmarks under a shared
//!   `-sum(distance to nearest agent)` reward.
//!
//! All dynamics are deterministic; randomness enters only through seeded
//! initial placement (`spread`) and policy sampling.

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown environment {0:?} (expected matrix, commit2, or spread)")]
    UnknownEnv(String),
    #[error("agent {agent} action {action} out of range (action_count {action_count})")]
    ActionOutOfRange { agent: usize, action: usize, action_count: usize },
    #[error("expected {expected} actions, got {got}")]
    WrongAgentCount { expected: usize, got: usize },
    #[error("step called after episode end")]
    EpisodeDone,
}

/// Immutable environment descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub action_count: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub max_steps: usize,
    pub gamma: f64,
}

/// Outcome of one joint step: per-agent observations, the global state for
/// the centralized critic, the shared team reward, and a per-step optimality
/// indicator used by evaluation (win = indicator at the final step).
#[derive(Debug, Clone)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub global_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub optimal: bool,
}

pub trait Env {
    fn spec(&self) -> EnvSpec;
    /// Identical seed implies an identical episode realization.
    fn reset(&mut self, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>);
    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError>;
}

/// Environment registry keyed by the config `env` name.
pub fn make_env(name: &str) -> Result<Box<dyn Env>, EnvError> {
    match name {
        "matrix" => Ok(Box::new(MatrixGame::new())),
        "commit2" => Ok(Box::new(TwoStepCommit::new())),
        "spread" => Ok(Box::new(GridSpread::new())),
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}

fn validate_joint(spec: &EnvSpec, done: bool, joint: &[usize]) -> Result<(), EnvError> {
    if done {
        return Err(EnvError::EpisodeDone);
    }
    if joint.len() != spec.n_agents {
        return Err(EnvError::WrongAgentCount { expected: spec.n_agents, got: joint.len() });
    }
    for (agent, &action) in joint.iter().enumerate() {
        if action >= spec.action_count {
            return Err(EnvError::ActionOutOfRange {
                agent,
                action,
                action_count: spec.action_count,
            });
        }
    }
    Ok(())
}

fn one_hot(idx: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[idx] = 1.0;
    v
}

/// One-shot 2-agent, 2-action matrix game with payoff
/// `[[1.0, 0.0], [0.0, 0.5]]`; joint action (0, 0) is the unique optimum.
pub struct MatrixGame {
    done: bool,
}

const MATRIX_PAYOFF: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 0.5]];

impl MatrixGame {
    pub fn new() -> Self {
        Self { done: true }
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        // constant dummy observation plus agent one-hot
        (0..2)
            .map(|i| {
                let mut obs = vec![1.0];
                obs.extend(one_hot(i, 2));
                obs
            })
            .collect()
    }
}

impl Default for MatrixGame {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for MatrixGame {
    fn spec(&self) -> EnvSpec {
        EnvSpec { n_agents: 2, action_count: 2, obs_dim: 3, state_dim: 1, max_steps: 1, gamma: 0.99 }
    }

    fn reset(&mut self, _seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        self.done = false;
        (self.observations(), vec![1.0])
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        validate_joint(&self.spec(), self.done, joint_action)?;
        self.done = true;
        let reward = MATRIX_PAYOFF[joint_action[0]][joint_action[1]];
        Ok(StepResult {
            observations: self.observations(),
            global_state: vec![1.0],
            reward,
            done: true,
            optimal: joint_action == [0, 0],
        })
    }
}

/// Two-step coordination game. Step 1: each agent commits to A or B
/// (reward 0). Step 2: each agent executes (action 0) or aborts (action 1);
/// reward is +1 if the commits matched and both execute, -0.1 otherwise.
/// The payoff for a coordinated step-1 choice only arrives at step 2.
pub struct TwoStepCommit {
    phase: usize,
    commits: [usize; 2],
    done: bool,
}

impl TwoStepCommit {
    pub fn new() -> Self {
        Self { phase: 0, commits: [0, 0], done: true }
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..2)
            .map(|i| {
                let own_commit = if self.phase == 1 { self.commits[i] as f64 } else { 0.0 };
                let mut obs = vec![self.phase as f64, own_commit];
                obs.extend(one_hot(i, 2));
                obs
            })
            .collect()
    }

    fn global_state(&self) -> Vec<f64> {
        if self.phase == 1 {
            vec![1.0, self.commits[0] as f64, self.commits[1] as f64]
        } else {
            vec![0.0, 0.0, 0.0]
        }
    }
}

impl Default for TwoStepCommit {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for TwoStepCommit {
    fn spec(&self) -> EnvSpec {
        EnvSpec { n_agents: 2, action_count: 2, obs_dim: 4, state_dim: 3, max_steps: 2, gamma: 0.99 }
    }

    fn reset(&mut self, _seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        self.phase = 0;
        self.commits = [0, 0];
        self.done = false;
        (self.observations(), self.global_state())
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        validate_joint(&self.spec(), self.done, joint_action)?;
        if self.phase == 0 {
            self.commits = [joint_action[0], joint_action[1]];
            self.phase = 1;
            Ok(StepResult {
                observations: self.observations(),
                global_state: self.global_state(),
                reward: 0.0,
                done: false,
                optimal: false,
            })
        } else {
            self.done = true;
            let matched = self.commits[0] == self.commits[1];
            let both_execute = joint_action == [0, 0];
            let reward = if matched && both_execute { 1.0 } else { -0.1 };
            Ok(StepResult {
                observations: self.observations(),
                global_state: self.global_state(),
                reward,
                done: true,
                optimal: reward == 1.0,
            })
        }
    }
}

const SPREAD_SIZE: i64 = 5;
const SPREAD_AGENTS: usize = 3;
const SPREAD_LANDMARKS: usize = 3;
const SPREAD_MAX_STEPS: usize = 10;

/// Cooperative spread on a 5x5 grid: 3 agents, 3 landmarks, actions
/// {stay, up, down, left, right}. Shared reward per step is minus the sum
/// over landmarks of Manhattan distance to the nearest agent; 0 exactly
/// when every landmark is covered.
pub struct GridSpread {
    agents: Vec<(i64, i64)>,
    landmarks: Vec<(i64, i64)>,
    steps: usize,
    done: bool,
}

impl GridSpread {
    pub fn new() -> Self {
        Self {
            agents: vec![(0, 0); SPREAD_AGENTS],
            landmarks: vec![(0, 0); SPREAD_LANDMARKS],
            steps: 0,
            done: true,
        }
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        let norm = (SPREAD_SIZE - 1) as f64;
        (0..SPREAD_AGENTS)
            .map(|i| {
                let mut obs = vec![self.agents[i].0 as f64 / norm, self.agents[i].1 as f64 / norm];
                for &(x, y) in &self.landmarks {
                    obs.push(x as f64 / norm);
                    obs.push(y as f64 / norm);
                }
                obs.extend(one_hot(i, SPREAD_AGENTS));
                obs
            })
            .collect()
    }

    fn global_state(&self) -> Vec<f64> {
        let norm = (SPREAD_SIZE - 1) as f64;
        let mut state = Vec::with_capacity(2 * (SPREAD_AGENTS + SPREAD_LANDMARKS));
        for &(x, y) in self.agents.iter().chain(&self.landmarks) {
            state.push(x as f64 / norm);
            state.push(y as f64 / norm);
        }
        state
    }

    fn coverage_cost(&self) -> f64 {
        let mut cost = 0.0;
        for &(lx, ly) in &self.landmarks {
            let nearest = self
                .agents
                .iter()
                .map(|&(ax, ay)| (ax - lx).abs() + (ay - ly).abs())
                .min()
                .unwrap();
            cost += nearest as f64;
        }
        cost
    }
}

impl Default for GridSpread {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for GridSpread {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            n_agents: SPREAD_AGENTS,
            action_count: 5,
            obs_dim: 2 + 2 * SPREAD_LANDMARKS + SPREAD_AGENTS,
            state_dim: 2 * (SPREAD_AGENTS + SPREAD_LANDMARKS),
            max_steps: SPREAD_MAX_STEPS,
            gamma: 0.99,
        }
    }

    fn reset(&mut self, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (SPREAD_SIZE * SPREAD_SIZE) as usize;
        // landmarks occupy distinct cells so full coverage is attainable
        let picks = index_sample(&mut rng, cells, SPREAD_LANDMARKS);
        self.landmarks = picks
            .iter()
            .map(|c| ((c as i64) % SPREAD_SIZE, (c as i64) / SPREAD_SIZE))
            .collect();
        self.agents = (0..SPREAD_AGENTS)
            .map(|_| (rng.gen_range(0..SPREAD_SIZE), rng.gen_range(0..SPREAD_SIZE)))
            .collect();
        self.steps = 0;
        self.done = false;
        (self.observations(), self.global_state())
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        validate_joint(&self.spec(), self.done, joint_action)?;
        for (pos, &action) in self.agents.iter_mut().zip(joint_action) {
            let (dx, dy) = match action {
                0 => (0, 0),
                1 => (0, 1),
                2 => (0, -1),
                3 => (-1, 0),
                _ => (1, 0),
            };
            pos.0 = (pos.0 + dx).clamp(0, SPREAD_SIZE - 1);
            pos.1 = (pos.1 + dy).clamp(0, SPREAD_SIZE - 1);
        }
        self.steps += 1;
        self.done = self.steps >= SPREAD_MAX_STEPS;
        let cost = self.coverage_cost();
        Ok(StepResult {
            observations: self.observations(),
            global_state: self.global_state(),
            reward: -cost,
            done: self.done,
            optimal: cost == 0.0,
        })
    }
}
