//! Experiment runner.
//!
//! A run wires [`Env`], [`Agent`], [`Regulator`] and a [`ReplayBuffer`]
//! together in [`Trainer`]. Each environment step is:
//!
//! 1. sample an action and execute it (clipped for `hard_constraint`),
//! 2. store the transition,
//! 3. advance the regulator and feed it the dynamics prediction error,
//! 4. run the learner updates,
//! 5. reinitialize the learner when its gradient budget is exhausted.
//!
//! Outputs land in one directory per run: `run.toml` (config echo and
//! active mechanism), `metrics.csv`, and checkpoint/replay archive pairs.

mod compare;
mod eval;
mod metrics;
mod trainer;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Scenario};
use crate::regulator::RegulatorConfig;
use crate::sac::SacConfig;
use crate::{Error, Result};

pub use compare::{compare, median, write_summary, RunSummary, SummaryRow};
pub use eval::{evaluate, run_eval, EpisodeReport, EvalReport};
pub use metrics::{MetricsRow, MetricsWriter, RunMetrics, METRICS_HEADER};
pub use trainer::{run_finetune, run_many, run_training, RunOutcome, Trainer, CHECKPOINT_KIND};

/// Regularization pathway of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Growing soft constraint, contracted when the dynamics model is surprised.
    #[default]
    Aprl,
    /// Actions permanently bounded by the initial region.
    Restricted,
    /// Full action range, no mechanism.
    NoReg,
    /// Executed actions clipped to the scheduled region.
    HardConstraint,
    /// Soft constraint that grows on schedule but never contracts.
    NonAdaptive,
    /// Quadratic action cost subtracted from the training reward.
    RewardReg,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Aprl,
        Variant::Restricted,
        Variant::NoReg,
        Variant::HardConstraint,
        Variant::NonAdaptive,
        Variant::RewardReg,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::Aprl => "aprl",
            Variant::Restricted => "restricted",
            Variant::NoReg => "no_reg",
            Variant::HardConstraint => "hard_constraint",
            Variant::NonAdaptive => "non_adaptive",
            Variant::RewardReg => "reward_reg",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// How actions are regularized. At most one mechanism is ever active.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case")]
pub enum Pathway {
    None,
    /// Penalty on the actor's sampled actions against the scheduled region.
    ActorPenalty { adaptive: bool },
    /// Executed actions bounded elementwise.
    ActionClamp { bound: ClampBound },
    /// `λ‖a‖²` subtracted from the reward the learner sees.
    RewardCost { lambda: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampBound {
    /// The actor's output range is scaled down to this constant.
    Fixed(f64),
    /// Clipped to the regulator's current region, which grows and contracts.
    Scheduled,
}

impl Pathway {
    /// Whether the feasible-region schedule drives this run.
    pub fn uses_regulator(&self) -> bool {
        matches!(
            self,
            Pathway::ActorPenalty { .. } | Pathway::ActionClamp { bound: ClampBound::Scheduled }
        )
    }

    /// Whether a large prediction error may contract the region.
    pub fn adaptive(&self) -> bool {
        matches!(
            self,
            Pathway::ActorPenalty { adaptive: true } | Pathway::ActionClamp { bound: ClampBound::Scheduled }
        )
    }

    /// `[actor_penalty, action_clamp, reward_cost]` flags.
    pub fn flags(&self) -> [bool; 3] {
        [
            matches!(self, Pathway::ActorPenalty { .. }),
            matches!(self, Pathway::ActionClamp { .. }),
            matches!(self, Pathway::RewardCost { .. }),
        ]
    }
}

/// Maps a variant onto its single regularization mechanism.
pub fn apply_variant(variant: Variant, config: &ExperimentConfig) -> Pathway {
    match variant {
        Variant::Aprl => Pathway::ActorPenalty { adaptive: true },
        Variant::NonAdaptive => Pathway::ActorPenalty { adaptive: false },
        Variant::Restricted => Pathway::ActionClamp {
            bound: ClampBound::Fixed(config.regulator.start),
        },
        Variant::HardConstraint => Pathway::ActionClamp {
            bound: ClampBound::Scheduled,
        },
        Variant::NoReg => Pathway::None,
        Variant::RewardReg => Pathway::RewardCost {
            lambda: config.experiment.reward_reg_lambda,
        },
    }
}

/// Run-level settings: what to train, for how long, and where to write.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    pub scenario: Scenario,
    /// Environment steps per run.
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Coefficient of the `reward_reg` action cost.
    pub reward_reg_lambda: f64,
    /// Course length for the time-to-distance metric, in meters.
    pub course_length: f64,
    pub eval_episodes: usize,
    /// Write an extra checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
    /// Worker threads used when several seeds run at once.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Aprl,
            scenario: Scenario::Flat,
            steps: 100_000,
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("runs"),
            reward_reg_lambda: 0.1,
            course_length: 5.0,
            eval_episodes: 3,
            checkpoint_every: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { capacity: 1_000_000 }
    }
}

/// Everything a run needs, one TOML section per module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: RunConfig,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub regulator: RegulatorConfig,
    pub replay: ReplayConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.env
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        crate::env::apply_scenario(&self.env, self.experiment.scenario)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.sac.validate()?;
        self.regulator
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let run = &self.experiment;
        if !(run.reward_reg_lambda >= 0.0) {
            return Err(Error::Config("experiment: reward_reg_lambda must be non-negative".into()));
        }
        if !(run.course_length > 0.0) {
            return Err(Error::Config("experiment: course_length must be positive".into()));
        }
        if self.replay.capacity == 0 {
            return Err(Error::Config("replay: capacity must be positive".into()));
        }
        Ok(())
    }

    pub fn pathway(&self) -> Pathway {
        apply_variant(self.experiment.variant, self)
    }
}

/// Contents of `run.toml`: the resolved config plus the active mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub seed: u64,
    pub pathway: Pathway,
    pub config: ExperimentConfig,
}

impl RunEcho {
    pub const FILE: &'static str = "run.toml";

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(Self::FILE))?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join(Self::FILE), text)?;
        Ok(())
    }
}

/// Directory name for one (variant, scenario, seed) run.
pub fn run_dir_name(variant: Variant, scenario: Scenario, seed: u64) -> String {
    let scenario = scenario.to_string().replace(':', "-");
    format!("{variant}_{scenario}_seed{seed}")
}

#[cfg(test)]
mod tests;
