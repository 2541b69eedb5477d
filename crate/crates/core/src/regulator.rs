//! Adaptive feasible-region schedule and soft action constraint.
//!
//! The feasible region is a per-dimension magnitude bound `ε` on normalized
//! actions (±1 are the physical joint limits around the nominal pose). It
//! widens linearly from `region_initial` to `region_final` over
//! `growth_steps` environment steps. When the dynamics model's prediction
//! error reaches the shift threshold, the growth counter restarts and the
//! starting point is contracted to `shrink_factor` times the current region.
//! Actions outside the region are charged `σ · Σ_d max(0, |a_d| − ε_d)` in the
//! actor objective.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError};
use crate::autodiff::{AutodiffError, Scalar, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegulatorError {
    #[error("dynamics error must be finite and non-negative, got {0}")]
    BadError(f64),
    #[error("invalid regulator configuration: {0}")]
    Config(String),
}

/// Per-dimension action magnitude bound, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion(Vec<f64>);

impl FeasibleRegion {
    pub fn new(epsilon: Vec<f64>) -> Result<Self, RegulatorError> {
        if epsilon.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(RegulatorError::Config(format!(
                "region bounds must lie in [0, 1]: {epsilon:?}"
            )));
        }
        Ok(Self(epsilon))
    }

    pub fn uniform(dim: usize, epsilon: f64) -> Result<Self, RegulatorError> {
        Self::new(vec![epsilon; dim])
    }

    /// The whole normalized action box.
    pub fn full(dim: usize) -> Self {
        Self(vec![1.0; dim])
    }

    pub fn epsilon(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len().max(1) as f64
    }

    /// `α·end + (1−α)·start`, elementwise.
    pub fn lerp(start: &Self, end: &Self, alpha: f64) -> Self {
        Self(
            start
                .0
                .iter()
                .zip(&end.0)
                .map(|(&s, &e)| alpha * e + (1.0 - alpha) * s)
                .collect(),
        )
    }

    /// Clips an action into the region (used by the hard-constraint baseline).
    pub fn clip(&self, action: &[f32]) -> Vec<f32> {
        action
            .iter()
            .zip(&self.0)
            .map(|(&a, &e)| a.clamp(-e as f32, e as f32))
            .collect()
    }

    pub fn contains(&self, action: &[f32]) -> bool {
        action.iter().zip(&self.0).all(|(&a, &e)| (a.abs() as f64) <= e)
    }
}

/// `σ · Σ_d max(0, |a_d| − ε_d)`.
pub fn penalty(action: &[f64], region: &FeasibleRegion, sigma: f64) -> f64 {
    assert_eq!(action.len(), region.dim(), "action and region dimension differ");
    sigma
        * action
            .iter()
            .zip(region.epsilon())
            .map(|(&a, &e)| (a.abs() - e).max(0.0))
            .sum::<f64>()
}

/// Per-row penalty `[B, 1]` for a `[B, A]` batch of actions on a tape.
///
/// The subgradient at both kinks (`a = 0` and `|a| = ε`) is zero.
pub fn penalty_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    actions: Var,
    region: &FeasibleRegion,
    sigma: T,
) -> Result<Var, AutodiffError> {
    let (_, a_dim) = tape.value(actions).dims2()?;
    if a_dim != region.dim() {
        return Err(AutodiffError::ShapeMismatch {
            op: "penalty",
            left: tape.value(actions).shape().to_vec(),
            right: vec![region.dim()],
        });
    }
    let neg_eps: Vec<T> = region.epsilon().iter().map(|&e| T::from_f64_lossy(-e)).collect();
    let neg_eps = tape.constant(Tensor::from_raw(vec![1, a_dim], neg_eps));
    let mag = tape.abs(actions);
    let excess = tape.add_bias(mag, neg_eps)?;
    let violation = tape.relu(excess);
    let per_row = tape.sum_cols(violation)?;
    Ok(tape.scale(per_row, sigma))
}

/// Mean over state dimensions of the squared prediction error, each
/// dimension scaled by its running standard deviation.
pub fn compute_dyn_error(predicted: &[f32], observed: &[f32], state_std: &[f64]) -> f64 {
    assert_eq!(predicted.len(), observed.len());
    assert_eq!(predicted.len(), state_std.len());
    let n = predicted.len().max(1) as f64;
    predicted
        .iter()
        .zip(observed)
        .zip(state_std)
        .map(|((&p, &o), &s)| {
            let z = (p as f64 - o as f64) / s;
            z * z
        })
        .sum::<f64>()
        / n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegulatorConfig {
    /// Environment steps for the region to grow from start to end.
    pub growth_steps: u64,
    /// Initial bound, applied to every action dimension.
    pub start: f64,
    /// Final bound, applied to every action dimension.
    pub end: f64,
    /// Penalty weight σ.
    pub sigma: f64,
    /// Shift threshold on the (smoothed) normalized prediction error.
    pub shift_threshold: f64,
    /// Multiplicative contraction applied on a shift.
    pub shrink_factor: f64,
    /// Exponential smoothing of the error; 0 compares the raw error.
    pub error_ema: f64,
    /// A shrink never takes a bound below this (or below its current value if already smaller).
    pub shrink_floor: f64,
    /// Environment steps after training starts (and after each reset) before the gate is armed.
    pub gate_grace_steps: u64,
}

impl Default for RegulatorConfig {
    fn default() -> Self {
        Self {
            growth_steps: 25_000,
            start: 0.15,
            end: 1.0,
            sigma: 10.0,
            shift_threshold: 2.0,
            shrink_factor: 0.9,
            error_ema: 0.9,
            shrink_floor: 0.05,
            gate_grace_steps: 2_000,
        }
    }
}

impl RegulatorConfig {
    pub fn validate(&self) -> Result<(), RegulatorError> {
        let bad = |m: &str| Err(RegulatorError::Config(m.to_string()));
        if self.growth_steps == 0 {
            return bad("growth_steps must be positive");
        }
        if !(0.0..=1.0).contains(&self.start) || !(0.0..=1.0).contains(&self.end) {
            return bad("start and end must lie in [0, 1]");
        }
        if self.start > self.end {
            return bad("start must not exceed end");
        }
        if !(self.sigma >= 0.0) {
            return bad("sigma must be non-negative");
        }
        if !(self.shift_threshold >= 0.0) {
            return bad("shift_threshold must be non-negative");
        }
        if !(0.0..1.0).contains(&self.shrink_factor) {
            return bad("shrink_factor must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.error_ema) {
            return bad("error_ema must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Outcome of feeding one prediction error to the regulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub shrink: bool,
    /// The value compared with the threshold.
    pub smoothed_error: f64,
    /// Region in force for this step, before any contraction.
    pub region: FeasibleRegion,
}

/// Curriculum state: growth counter, interpolation endpoints and error smoother.
#[derive(Clone, Debug, PartialEq)]
pub struct Regulator {
    config: RegulatorConfig,
    counter: u64,
    region_initial: FeasibleRegion,
    region_final: FeasibleRegion,
    smoothed: Option<f64>,
    shrinks: u64,
}

impl Regulator {
    pub fn new(config: RegulatorConfig, action_dim: usize) -> Result<Self, RegulatorError> {
        config.validate()?;
        Ok(Self {
            region_initial: FeasibleRegion::uniform(action_dim, config.start)?,
            region_final: FeasibleRegion::uniform(action_dim, config.end)?,
            config,
            counter: 0,
            smoothed: None,
            shrinks: 0,
        })
    }

    /// Starts from explicit per-dimension endpoints.
    pub fn with_regions(
        config: RegulatorConfig,
        initial: FeasibleRegion,
        end: FeasibleRegion,
    ) -> Result<Self, RegulatorError> {
        config.validate()?;
        if initial.dim() != end.dim() || initial.0.iter().zip(&end.0).any(|(i, e)| i > e) {
            return Err(RegulatorError::Config(
                "initial region must not exceed final region".into(),
            ));
        }
        Ok(Self {
            config,
            counter: 0,
            region_initial: initial,
            region_final: end,
            smoothed: None,
            shrinks: 0,
        })
    }

    pub fn config(&self) -> &RegulatorConfig {
        &self.config
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn region_initial(&self) -> &FeasibleRegion {
        &self.region_initial
    }

    pub fn region_final(&self) -> &FeasibleRegion {
        &self.region_final
    }

    pub fn smoothed_error(&self) -> Option<f64> {
        self.smoothed
    }

    pub fn shrink_count(&self) -> u64 {
        self.shrinks
    }

    /// Growth progress `clip(i / N, 0, 1)`.
    pub fn progress(&self) -> f64 {
        (self.counter as f64 / self.config.growth_steps as f64).clamp(0.0, 1.0)
    }

    pub fn current_region(&self) -> FeasibleRegion {
        let alpha = self.progress();
        if alpha >= 1.0 {
            return self.region_final.clone();
        }
        FeasibleRegion::lerp(&self.region_initial, &self.region_final, alpha)
    }

    /// Advances the growth counter without consulting the dynamics model.
    pub fn advance(&mut self) {
        self.counter += 1;
    }

    /// Advances the counter and feeds one normalized prediction error. When the
    /// smoothed error reaches the threshold the region in force this step is
    /// contracted and growth restarts from it.
    pub fn observe_error(&mut self, error: f64) -> Result<Observation, RegulatorError> {
        let mut obs = self.observe_error_fixed(error)?;
        obs.shrink = obs.smoothed_error >= self.config.shift_threshold;
        if obs.shrink {
            self.shrink(&obs.region);
        }
        Ok(obs)
    }

    /// Like [`observe_error`](Self::observe_error) but never shrinks.
    pub fn observe_error_fixed(&mut self, error: f64) -> Result<Observation, RegulatorError> {
        if !error.is_finite() || error < 0.0 {
            return Err(RegulatorError::BadError(error));
        }
        let c = self.config.error_ema;
        let smoothed = self.smoothed.map_or(error, |p| c * p + (1.0 - c) * error);
        self.smoothed = Some(smoothed);
        self.counter += 1;
        Ok(Observation {
            shrink: false,
            smoothed_error: smoothed,
            region: self.current_region(),
        })
    }

    fn shrink(&mut self, current: &FeasibleRegion) {
        let f = self.config.shrink_factor;
        let floor = self.config.shrink_floor;
        self.region_initial = FeasibleRegion(
            current
                .0
                .iter()
                .map(|&e| (f * e).max(floor.min(e)))
                .collect(),
        );
        self.counter = 0;
        self.shrinks += 1;
    }

    /// Forgets the error history, so the next observation seeds the smoother.
    pub fn reset_smoother(&mut self) {
        self.smoothed = None;
    }

    pub(crate) fn save(&self, archive: &mut Archive, prefix: &str) {
        archive.push_u64s(format!("{prefix}.counters"), &[self.counter, self.shrinks]);
        archive.push_f64s(format!("{prefix}.initial"), &self.region_initial.0);
        archive.push_f64s(format!("{prefix}.final"), &self.region_final.0);
        archive.push_f64s(
            format!("{prefix}.smoothed"),
            &self.smoothed.map(|v| vec![v]).unwrap_or_default(),
        );
    }

    pub(crate) fn load(config: RegulatorConfig, archive: &Archive, prefix: &str) -> Result<Self, ArchiveError> {
        let counters = archive.u64s(&format!("{prefix}.counters"))?;
        let [counter, shrinks] = counters[..] else {
            return Err(ArchiveError::Type(format!("{prefix}.counters")));
        };
        let smoothed = archive.f64s(&format!("{prefix}.smoothed"))?;
        let region = |name: &str| {
            FeasibleRegion::new(archive.f64s(&format!("{prefix}.{name}"))?)
                .map_err(|e| ArchiveError::Corrupt(e.to_string()))
        };
        Ok(Self {
            config,
            counter,
            region_initial: region("initial")?,
            region_final: region("final")?,
            smoothed: smoothed.first().copied(),
            shrinks,
        })
    }
}
