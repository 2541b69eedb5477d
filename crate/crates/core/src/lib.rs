//! Adaptive policy regularization for off-policy locomotion learning.
//!
//! The crate bundles everything needed to train a soft actor-critic agent
//! whose exploration is shaped by a growing, dynamics-gated soft action
//! constraint:
//!
//! * [`autodiff`]: a small reverse-mode differentiation tape and Adam.
//! * [`nets`]: actor, critic ensemble and dynamics model.
//! * [`replay`]: ring-buffer experience storage.
//! * [`regulator`]: the feasible-region schedule and action penalty.
//! * [`sac`]: the learner (critic, dynamics, actor updates and resets).
//! * [`env`]: a planar legged robot driven by PD joint targets.
//! * [`harness`]: experiment runner, baselines, metrics and checkpoints.

pub mod archive;
pub mod autodiff;
pub mod env;
pub mod harness;
pub mod nets;
pub mod regulator;
pub mod replay;
pub mod sac;

mod error;
mod rng;

pub use error::{Error, Result};
pub use rng::RunRng;

pub use autodiff::{AdamConfig, Tensor};
pub use env::{Env, EnvConfig, Observation, RewardConfig, Scenario};
pub use harness::{ExperimentConfig, RunMetrics, Variant};
pub use regulator::{FeasibleRegion, Regulator, RegulatorConfig};
pub use replay::{ReplayBuffer, Transition};
pub use sac::{Agent, SacConfig};
