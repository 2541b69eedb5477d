//! Planar two-legged robot driven by low-pass filtered PD joint targets.
//!
//! Each control step (20 Hz) filters the policy output, maps it to joint
//! targets around the nominal pose, and linearly interpolates from the
//! previous target over 25 ticks at 500 Hz. Every tick applies a clamped PD
//! torque and advances the rigid-body model by a few fixed physics steps.
//!
//! Observation layout (18 values, f32):
//!
//! | index | quantity                                   | unit        |
//! |-------|--------------------------------------------|-------------|
//! | 0     | torso pitch                                | rad         |
//! | 1–2   | torso velocity in the torso frame (fwd, up) | m/s         |
//! | 3     | pitch rate                                 | rad/s       |
//! | 4–7   | joint angles minus nominal                 | rad         |
//! | 8–11  | joint velocities × 0.1                     | 10·rad/s    |
//! | 12–13 | foot contact flags (front, rear)           | 0 or 1      |
//! | 14–17 | last policy action                         | normalized  |

mod physics;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError};
use crate::rng::RunRng;
use physics::{Body, Ground, Model, Vec7, NJ, NQ};

pub const OBS_DIM: usize = 18;
pub const ACTION_DIM: usize = NJ;
const JOINT_VELOCITY_SCALE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action has {actual} entries, expected {ACTION_DIM}")]
    ActionShape { actual: usize },
    #[error("action entry {index} is not finite")]
    NonFiniteAction { index: usize },
    #[error("simulation diverged at control step {step}")]
    Diverged { step: u32 },
    #[error("episode is over; call reset")]
    EpisodeOver,
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid environment configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub forward_weight: f64,
    pub upright_weight: f64,
    pub angular_velocity_weight: f64,
    pub torque_smoothness_weight: f64,
    /// Forward velocity is clipped to `[-velocity_clip, velocity_clip]`.
    pub velocity_clip: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            forward_weight: 1.0,
            upright_weight: 0.2,
            angular_velocity_weight: 0.05,
            torque_smoothness_weight: 0.01,
            velocity_clip: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub control_hz: u32,
    pub sim_hz: u32,
    /// Integration steps per 500 Hz tick.
    pub physics_substeps: u32,
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
    /// Joint order: front hip, front knee, rear hip, rear knee.
    pub joint_lower: [f64; NJ],
    pub joint_upper: [f64; NJ],
    pub nominal: [f64; NJ],
    pub fall_pitch_deg: f64,
    pub gravity: f64,
    pub torso_mass: f64,
    pub torso_half_length: f64,
    pub thigh_mass: f64,
    pub thigh_length: f64,
    pub shank_mass: f64,
    pub shank_length: f64,
    pub joint_damping: f64,
    pub ground_stiffness: f64,
    pub ground_damping: f64,
    pub friction: f64,
    pub slip_velocity: f64,
    /// A foot counts as in contact at or below this height.
    pub contact_height: f64,
    pub slope_deg: f64,
    pub frozen_joint: Option<usize>,
    /// Weight on the newest policy output in the action low-pass filter.
    pub filter_alpha: f64,
    pub reset_jitter: f64,
    pub max_episode_steps: u32,
    pub soft_stiffness_factor: f64,
    pub soft_damping_factor: f64,
    pub low_friction_factor: f64,
    pub reward: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            control_hz: 20,
            sim_hz: 500,
            physics_substeps: 4,
            kp: 20.0,
            kd: 1.0,
            torque_limit: 8.0,
            joint_lower: [-0.5, -2.0, -0.5, -2.0],
            joint_upper: [1.5, 0.0, 1.5, 0.0],
            nominal: [0.5, -1.0, 0.5, -1.0],
            fall_pitch_deg: 30.0,
            gravity: 9.81,
            torso_mass: 2.0,
            torso_half_length: 0.25,
            thigh_mass: 0.25,
            thigh_length: 0.2,
            shank_mass: 0.15,
            shank_length: 0.2,
            joint_damping: 0.01,
            ground_stiffness: 2.0e4,
            ground_damping: 200.0,
            friction: 0.8,
            slip_velocity: 1e-4,
            contact_height: 0.002,
            slope_deg: 0.0,
            frozen_joint: None,
            filter_alpha: 0.7,
            reset_jitter: 0.05,
            max_episode_steps: 500,
            soft_stiffness_factor: 0.1,
            soft_damping_factor: 3.0,
            low_friction_factor: 0.3,
            reward: RewardConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        if self.control_hz == 0 || self.sim_hz % self.control_hz != 0 {
            return bad(format!(
                "sim_hz ({}) must be a positive multiple of control_hz ({})",
                self.sim_hz, self.control_hz
            ));
        }
        if self.physics_substeps == 0 {
            return bad("physics_substeps must be positive".into());
        }
        for j in 0..NJ {
            let (lo, hi, n) = (self.joint_lower[j], self.joint_upper[j], self.nominal[j]);
            if !(lo < n && n < hi) {
                return bad(format!("nominal angle of joint {j} ({n}) must lie strictly inside ({lo}, {hi})"));
            }
        }
        if let Some(j) = self.frozen_joint {
            if j >= NJ {
                return bad(format!("frozen joint index {j} out of range"));
            }
        }
        let r = &self.reward;
        let weights = [
            r.forward_weight,
            r.upright_weight,
            r.angular_velocity_weight,
            r.torque_smoothness_weight,
            r.velocity_clip,
        ];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("reward weights must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.filter_alpha) || self.filter_alpha == 0.0 {
            return bad("filter_alpha must lie in (0, 1]".into());
        }
        let positive = [
            self.kp,
            self.torque_limit,
            self.torso_mass,
            self.thigh_mass,
            self.shank_mass,
            self.ground_stiffness,
            self.slip_velocity,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return bad("gains, masses, stiffness and slip velocity must be positive".into());
        }
        Ok(())
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz as f64
    }

    /// Interpolation ticks per control step.
    pub fn ticks(&self) -> u32 {
        self.sim_hz / self.control_hz
    }

    fn fall_pitch(&self) -> f64 {
        self.fall_pitch_deg.to_radians()
    }

    /// Joint target for a normalized action: `±1` reaches the joint limits.
    pub fn action_to_target(&self, action: &[f64; NJ]) -> [f64; NJ] {
        std::array::from_fn(|j| {
            let a = action[j];
            let n = self.nominal[j];
            if a >= 0.0 {
                n + a * (self.joint_upper[j] - n)
            } else {
                n + a * (n - self.joint_lower[j])
            }
        })
    }

    fn model(&self) -> Model {
        Model::new(
            Body {
                torso_mass: self.torso_mass,
                torso_half_length: self.torso_half_length,
                thigh_mass: self.thigh_mass,
                thigh_length: self.thigh_length,
                shank_mass: self.shank_mass,
                shank_length: self.shank_length,
                gravity: self.gravity,
                joint_damping: self.joint_damping,
            },
            Ground {
                stiffness: self.ground_stiffness,
                damping: self.ground_damping,
                friction: self.friction,
                slip_velocity: self.slip_velocity,
                slope_rad: self.slope_deg.to_radians(),
            },
            self.frozen_joint,
        )
    }
}

/// Dynamics variations used for transfer and fine-tuning experiments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scenario {
    Flat,
    /// Locks one joint (index in front hip, front knee, rear hip, rear knee order) at its nominal angle.
    FrozenJoint(usize),
    SoftGround,
    /// Uphill incline in degrees.
    Slope(f64),
    LowFriction,
}

impl Scenario {
    pub const DEFAULT_FROZEN_JOINT: usize = 2;
    pub const DEFAULT_SLOPE_DEG: f64 = 5.0;
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::Flat
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Flat => write!(f, "flat"),
            Scenario::FrozenJoint(j) => write!(f, "frozen_joint:{j}"),
            Scenario::SoftGround => write!(f, "soft_ground"),
            Scenario::Slope(d) => write!(f, "slope:{d}"),
            Scenario::LowFriction => write!(f, "low_friction"),
        }
    }
}

impl FromStr for Scenario {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, EnvError> {
        let unknown = || EnvError::UnknownScenario(s.to_string());
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let scenario = match (name, arg) {
            ("flat", None) => Scenario::Flat,
            ("soft_ground", None) => Scenario::SoftGround,
            ("low_friction", None) => Scenario::LowFriction,
            ("frozen_joint", None) => Scenario::FrozenJoint(Self::DEFAULT_FROZEN_JOINT),
            ("frozen_joint", Some(a)) => {
                let j: usize = a.parse().map_err(|_| unknown())?;
                if j >= NJ {
                    return Err(unknown());
                }
                Scenario::FrozenJoint(j)
            }
            ("slope", None) => Scenario::Slope(Self::DEFAULT_SLOPE_DEG),
            ("slope", Some(a)) => {
                let d: f64 = a.parse().map_err(|_| unknown())?;
                if !(d.abs() < 45.0) {
                    return Err(unknown());
                }
                Scenario::Slope(d)
            }
            _ => return Err(unknown()),
        };
        Ok(scenario)
    }
}

impl TryFrom<String> for Scenario {
    type Error = EnvError;
    fn try_from(s: String) -> Result<Self, EnvError> {
        s.parse()
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.to_string()
    }
}

/// Returns `config` modified for `scenario`.
pub fn apply_scenario(config: &EnvConfig, scenario: Scenario) -> EnvConfig {
    let mut c = config.clone();
    match scenario {
        Scenario::Flat => {}
        Scenario::FrozenJoint(j) => c.frozen_joint = Some(j),
        Scenario::SoftGround => {
            c.ground_stiffness *= c.soft_stiffness_factor;
            c.ground_damping *= c.soft_damping_factor;
        }
        Scenario::Slope(deg) => c.slope_deg = deg,
        Scenario::LowFriction => c.friction *= c.low_friction_factor,
    }
    c
}

/// Full simulator state between control steps.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    /// `[x, z, pitch, front_hip, front_knee, rear_hip, rear_knee]`.
    pub q: [f64; NQ],
    pub qd: [f64; NQ],
    pub contacts: [bool; 2],
    pub last_action: [f64; NJ],
    /// Low-pass filter state, in normalized action units.
    pub filtered: [f64; NJ],
    /// Joint targets reached at the end of the last control step.
    pub target: [f64; NJ],
    /// Mean applied torque over the last control step.
    pub torques: [f64; NJ],
    pub step: u32,
}

const STATE_VALUES: usize = 2 * NQ + 2 + 4 * NJ + 1;

impl EnvState {
    pub fn pitch(&self) -> f64 {
        self.q[2]
    }

    /// Flat numeric encoding, inverse of [`from_values`](Self::from_values).
    pub fn to_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(STATE_VALUES);
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.qd);
        v.extend(self.contacts.iter().map(|&c| c as u8 as f64));
        v.extend_from_slice(&self.last_action);
        v.extend_from_slice(&self.filtered);
        v.extend_from_slice(&self.target);
        v.extend_from_slice(&self.torques);
        v.push(self.step as f64);
        v
    }

    pub fn from_values(v: &[f64]) -> Option<Self> {
        if v.len() != STATE_VALUES {
            return None;
        }
        let mut it = v.iter().copied();
        let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<_>>();
        let q = take(NQ).try_into().ok()?;
        let qd = take(NQ).try_into().ok()?;
        let c = take(2);
        let last_action = take(NJ).try_into().ok()?;
        let filtered = take(NJ).try_into().ok()?;
        let target = take(NJ).try_into().ok()?;
        let torques = take(NJ).try_into().ok()?;
        let step = take(1)[0] as u32;
        Some(Self {
            q,
            qd,
            contacts: [c[0] != 0.0, c[1] != 0.0],
            last_action,
            filtered,
            target,
            torques,
            step,
        })
    }

    /// The policy-facing observation; see the module docs for the layout.
    pub fn observation(&self, config: &EnvConfig) -> Observation {
        let pitch = self.q[2];
        let (s, c) = pitch.sin_cos();
        let (vx, vz) = (self.qd[0], self.qd[1]);
        let mut o = Vec::with_capacity(OBS_DIM);
        o.push(pitch);
        o.push(c * vx + s * vz);
        o.push(-s * vx + c * vz);
        o.push(self.qd[2]);
        o.extend((0..NJ).map(|j| self.q[3 + j] - config.nominal[j]));
        o.extend((0..NJ).map(|j| self.qd[3 + j] * JOINT_VELOCITY_SCALE));
        o.extend(self.contacts.iter().map(|&c| c as u8 as f64));
        o.extend_from_slice(&self.last_action);
        Observation(o.into_iter().map(|v| v as f32).collect())
    }
}

/// Fixed-order observation vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(pub Vec<f32>);

impl std::ops::Deref for Observation {
    type Target = [f32];
    fn deref(&self) -> &[f32] {
        &self.0
    }
}

/// Diagnostic quantities for one control step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub fall: bool,
    /// Torso displacement along the ground over the step, divided by its duration.
    pub forward_velocity: f64,
    pub torques: [f64; NJ],
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    /// The torso pitched past the fall threshold.
    pub terminated: bool,
    /// The episode hit its time limit without falling.
    pub truncated: bool,
    pub info: StepInfo,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Displacement of the torso along the ground tangent per second.
pub fn forward_velocity(prev: &EnvState, next: &EnvState, config: &EnvConfig) -> f64 {
    let (s, c) = config.slope_deg.to_radians().sin_cos();
    let dx = next.q[0] - prev.q[0];
    let dz = next.q[1] - prev.q[1];
    (c * dx + s * dz) / config.control_dt()
}

/// `w_v·clip(v) + w_u·cos(pitch) − w_ω·ω² − w_τ·‖τ_t − τ_{t−1}‖²`.
pub fn compute_reward(prev: &EnvState, next: &EnvState, config: &EnvConfig) -> f64 {
    let r = &config.reward;
    let v = forward_velocity(prev, next, config).clamp(-r.velocity_clip, r.velocity_clip);
    let omega = next.qd[2];
    let dtau: f64 = next
        .torques
        .iter()
        .zip(&prev.torques)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    r.forward_weight * v + r.upright_weight * next.q[2].cos()
        - r.angular_velocity_weight * omega * omega
        - r.torque_smoothness_weight * dtau
}

/// Target at tick `k` of `n`: `(1 − k/n)·prev + (k/n)·next`, exactly `next` at `k = n`.
pub fn interpolate(prev: &[f64; NJ], next: &[f64; NJ], k: u32, n: u32) -> [f64; NJ] {
    let t = k as f64 / n as f64;
    std::array::from_fn(|j| (1.0 - t) * prev[j] + t * next[j])
}

pub struct Env {
    config: EnvConfig,
    model: Model,
    state: EnvState,
    rng: RunRng,
    done: bool,
}

impl Env {
    pub fn new(config: EnvConfig, rng: RunRng) -> Result<Self, EnvError> {
        config.validate()?;
        let model = config.model();
        let mut env = Self {
            state: EnvState {
                q: [0.0; NQ],
                qd: [0.0; NQ],
                contacts: [false; 2],
                last_action: [0.0; NJ],
                filtered: [0.0; NJ],
                target: config.nominal,
                torques: [0.0; NJ],
                step: 0,
            },
            config,
            model,
            rng,
            done: true,
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn rng(&self) -> &RunRng {
        &self.rng
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> Observation {
        self.state.observation(&self.config)
    }

    /// Total mechanical energy of the current state.
    pub fn energy(&self) -> f64 {
        self.model
            .energy(&Vec7::from_row_slice(&self.state.q), &Vec7::from_row_slice(&self.state.qd))
    }

    /// Restores a state captured with [`state`](Self::state).
    pub fn set_state(&mut self, state: EnvState) {
        self.done = self.is_fall(&state) || state.step >= self.config.max_episode_steps;
        self.state = state;
    }

    /// Nominal pose with uniform joint jitter, resting on the ground at rest.
    pub fn reset(&mut self) -> Observation {
        let c = &self.config;
        let slope = c.slope_deg.to_radians();
        let mut q = [0.0; NQ];
        q[2] = slope;
        for j in 0..NJ {
            let jitter = if c.reset_jitter > 0.0 && c.frozen_joint != Some(j) {
                self.rng.random_range(-c.reset_jitter..=c.reset_jitter)
            } else {
                0.0
            };
            q[3 + j] = (c.nominal[j] + jitter).clamp(c.joint_lower[j], c.joint_upper[j]);
        }
        let qv = Vec7::from_row_slice(&q);
        let lowest = (0..physics::N_CONTACTS)
            .map(|i| self.model.ground.height(self.model.contact_position(&qv, i)))
            .fold(f64::INFINITY, f64::min);
        q[1] = -lowest / slope.cos();
        let torques = std::array::from_fn(|j| {
            self.pd_torque(&q, &[0.0; NQ], c.nominal[j], j)
        });
        self.state = EnvState {
            q,
            qd: [0.0; NQ],
            contacts: [false; 2],
            last_action: [0.0; NJ],
            filtered: [0.0; NJ],
            target: self.config.nominal,
            torques,
            step: 0,
        };
        self.state.contacts = self.foot_contacts(&Vec7::from_row_slice(&q));
        self.done = false;
        self.observation()
    }

    fn pd_torque(&self, q: &[f64; NQ], qd: &[f64; NQ], target: f64, j: usize) -> f64 {
        if self.config.frozen_joint == Some(j) {
            return 0.0;
        }
        let c = &self.config;
        (c.kp * (target - q[3 + j]) - c.kd * qd[3 + j]).clamp(-c.torque_limit, c.torque_limit)
    }

    fn foot_contacts(&self, q: &Vec7) -> [bool; 2] {
        let feet = self.model.feet(q);
        feet.map(|p| self.model.ground.height(p) <= self.config.contact_height)
    }

    fn is_fall(&self, state: &EnvState) -> bool {
        state.q[2].abs() > self.config.fall_pitch()
    }

    /// Advances one control period. `action` is clipped to `[-1, 1]`.
    pub fn step(&mut self, action: &[f32]) -> Result<StepResult, EnvError> {
        if action.len() != ACTION_DIM {
            return Err(EnvError::ActionShape { actual: action.len() });
        }
        if let Some(index) = action.iter().position(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction { index });
        }
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let c = &self.config;
        let a: [f64; NJ] = std::array::from_fn(|j| (action[j] as f64).clamp(-1.0, 1.0));
        let prev = self.state.clone();
        let filtered: [f64; NJ] =
            std::array::from_fn(|j| c.filter_alpha * a[j] + (1.0 - c.filter_alpha) * prev.filtered[j]);
        let new_target = c.action_to_target(&filtered);

        let ticks = c.ticks();
        let sub = c.physics_substeps;
        let dt = 1.0 / (c.sim_hz as f64 * sub as f64);
        let mut q = Vec7::from_row_slice(&prev.q);
        let mut qd = Vec7::from_row_slice(&prev.qd);
        let mut torque_sum = [0.0; NJ];
        for k in 1..=ticks {
            let target = interpolate(&prev.target, &new_target, k, ticks);
            let qa: [f64; NQ] = q.into();
            let qda: [f64; NQ] = qd.into();
            let tau: [f64; NJ] = std::array::from_fn(|j| self.pd_torque(&qa, &qda, target[j], j));
            for j in 0..NJ {
                torque_sum[j] += tau[j];
            }
            for _ in 0..sub {
                self.model.step(&mut q, &mut qd, &tau, dt);
                self.clamp_joints(&mut q, &mut qd);
            }
        }
        if q.iter().chain(qd.iter()).any(|v| !v.is_finite()) {
            self.done = true;
            return Err(EnvError::Diverged { step: prev.step });
        }

        let next = EnvState {
            q: q.into(),
            qd: qd.into(),
            contacts: self.foot_contacts(&q),
            last_action: a,
            filtered,
            target: new_target,
            torques: torque_sum.map(|t| t / ticks as f64),
            step: prev.step + 1,
        };
        let reward = compute_reward(&prev, &next, &self.config);
        let fall = self.is_fall(&next);
        let truncated = !fall && next.step >= self.config.max_episode_steps;
        let info = StepInfo {
            fall,
            forward_velocity: forward_velocity(&prev, &next, &self.config),
            torques: next.torques,
        };
        self.state = next;
        self.done = fall || truncated;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminated: fall,
            truncated,
            info,
        })
    }

    fn clamp_joints(&self, q: &mut Vec7, qd: &mut Vec7) {
        let c = &self.config;
        for j in 0..NJ {
            let i = 3 + j;
            let (limit, outward) = if q[i] < c.joint_lower[j] {
                (c.joint_lower[j], qd[i] < 0.0)
            } else if q[i] > c.joint_upper[j] {
                (c.joint_upper[j], qd[i] > 0.0)
            } else {
                continue;
            };
            q[i] = limit;
            if outward {
                self.model.stop_coordinate(q, qd, i);
            }
        }
    }

    pub(crate) fn save(&self, archive: &mut Archive, prefix: &str) {
        archive.push_f64s(format!("{prefix}.state"), &self.state.to_values());
        crate::rng::save(&self.rng, archive, &format!("{prefix}.rng"));
    }

    pub(crate) fn load(&mut self, archive: &Archive, prefix: &str) -> Result<(), ArchiveError> {
        let values = archive.f64s(&format!("{prefix}.state"))?;
        let state = EnvState::from_values(&values)
            .ok_or_else(|| ArchiveError::Type(format!("{prefix}.state")))?;
        self.rng = crate::rng::load(archive, &format!("{prefix}.rng"))?;
        self.set_state(state);
        Ok(())
    }
}

/// Writes one CSV row per control step for debugging and regression checks.
pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        let mut cols = vec!["time".to_string()];
        cols.extend(["x", "z", "pitch", "fh", "fk", "rh", "rk"].iter().map(|s| s.to_string()));
        cols.extend(["vx", "vz", "pitch_rate", "fh_vel", "fk_vel", "rh_vel", "rk_vel"].iter().map(|s| s.to_string()));
        cols.extend((0..NJ).map(|j| format!("action{j}")));
        cols.extend(["reward", "terminated", "truncated"].iter().map(|s| s.to_string()));
        writeln!(out, "{}", cols.join(","))?;
        Ok(Self { out })
    }

    pub fn record(&mut self, time: f64, state: &EnvState, action: &[f32], result: &StepResult) -> std::io::Result<()> {
        let mut row = vec![format!("{time}")];
        row.extend(state.q.iter().chain(&state.qd).map(|v| format!("{v}")));
        row.extend(action.iter().map(|v| format!("{v}")));
        row.push(format!("{}", result.reward));
        row.push((result.terminated as u8).to_string());
        row.push((result.truncated as u8).to_string());
        writeln!(self.out, "{}", row.join(","))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
