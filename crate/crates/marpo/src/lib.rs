//! Multi-agent reflective policy optimization (MARPO) with KL-derived
//! asymmetric clipping, plus a MAPPO baseline, toy cooperative environments,
//! and a training/evaluation CLI.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`kl_clip`]: the KL estimator `f(x) = x - 1 - ln x`, discrete KL/TV
//!   distances, the EMA-tracked KL target controller, and the root solver
//!   that turns a KL target into asymmetric clipping bounds.
//! - [`approximator`]: small dense policy/value networks with exact
//!   reverse-mode gradients, an Adam/SGD optimizer, checkpointing, and a
//!   finite-difference gradient-checking harness.
//! - [`env`]: the Dec-POMDP environment trait and three deterministic toy
//!   cooperative games (`matrix`, `commit2`, `spread`).
//! - [`rollout`]: trajectory collection, GAE, reflective-pair construction,
//!   and minibatch assembly.
//! - [`losses`]: the MARPO surrogate (clip + reflective terms), the MAPPO
//!   baseline objective, the value loss, and the fused loss/gradient
//!   evaluation used by the trainer.
//! - [`trainer`]: the outer training loop and greedy evaluation.
//! - [`config`] / [`metrics`] / [`cli`] / [`selftest`]: run configuration,
//!   the metrics CSV schema, command-line entry points, and the built-in
//!   property self-test.

pub mod approximator;
pub mod cli;
pub mod config;
pub mod env;
pub mod kl_clip;
pub mod losses;
pub mod metrics;
pub mod rollout;
pub mod selftest;
pub mod trainer;

/// Splitmix64-style seed derivation so that every consumer of randomness
/// (init, per-episode resets, shuffles) gets an independent stream from the
/// single run seed.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
