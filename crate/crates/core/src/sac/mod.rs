//! Soft actor-critic learner with a dropout/LayerNorm critic ensemble, a
//! learned dynamics model and periodic full reinitialization.

pub mod losses;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArchiveError};
use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{ActorNet, CriticNet, DynamicsNet, Mlp};
use crate::regulator::{compute_dyn_error, FeasibleRegion};
use crate::replay::{Batch, ReplayBuffer};
use crate::rng::{self, RunRng};

pub use losses::{actor_loss, critic_loss, dynamics_loss, td_targets, ActorLoss};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub dynamics_hidden: usize,
    pub ensemble: usize,
    pub dropout: f64,
    pub batch_size: usize,
    /// Critic updates per environment step.
    pub replay_ratio: u32,
    /// Gradient steps after which every network is reinitialized.
    pub max_grad_steps: u64,
    pub gamma: f64,
    pub tau: f64,
    /// Defaults to `−action_dim` plus the log-volume of a scaled actor's
    /// output box, so shrinking the actor range does not make the target unreachable.
    pub target_entropy: Option<f64>,
    pub init_temperature: f64,
    pub auto_temperature: bool,
    /// Entropy terms in both the bootstrap target and the actor objective.
    pub entropy: bool,
    /// Environment steps collected before any update.
    pub warmup_steps: usize,
    pub actor_optim: AdamConfig,
    pub critic_optim: AdamConfig,
    pub dynamics_optim: AdamConfig,
    pub temperature_optim: AdamConfig,
    /// Lower bound on the per-dimension state std used for normalization.
    pub dynamics_std_floor: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            actor_hidden: 256,
            critic_hidden: 256,
            dynamics_hidden: 200,
            ensemble: 2,
            dropout: 0.01,
            batch_size: 256,
            replay_ratio: 20,
            max_grad_steps: 1_000_000,
            gamma: 0.99,
            tau: 0.005,
            target_entropy: None,
            init_temperature: 0.1,
            auto_temperature: true,
            entropy: true,
            warmup_steps: 1000,
            actor_optim: AdamConfig::default(),
            critic_optim: AdamConfig::default(),
            dynamics_optim: AdamConfig::default(),
            temperature_optim: AdamConfig::default(),
            dynamics_std_floor: 1e-3,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sac: {m}")));
        if self.replay_ratio == 0 {
            return bad("replay_ratio must be at least 1");
        }
        if self.max_grad_steps == 0 {
            return bad("max_grad_steps must be positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.ensemble == 0 {
            return bad("batch_size and ensemble must be positive");
        }
        if self.actor_hidden == 0 || self.critic_hidden == 0 || self.dynamics_hidden == 0 {
            return bad("hidden widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.init_temperature > 0.0) {
            return bad("init_temperature must be positive");
        }
        Ok(())
    }
}

/// Every trainable quantity of the agent, reinitialized together on reset.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams {
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub dynamics: DynamicsNet,
    pub log_alpha: Tensor<f32>,
    pub actor_opt: AdamState,
    pub critic_opts: Vec<AdamState>,
    pub dynamics_opt: AdamState,
    pub alpha_opt: AdamState,
}

impl AgentParams {
    fn init(config: &SacConfig, state_dim: usize, action_dim: usize, scale: &[f32], rng: &mut RunRng) -> Self {
        let actor = ActorNet::new(state_dim, action_dim, config.actor_hidden, scale.to_vec(), rng);
        let critic = CriticNet::new(
            state_dim,
            action_dim,
            config.critic_hidden,
            config.dropout,
            config.ensemble,
            rng,
        );
        let dynamics = DynamicsNet::new(
            state_dim,
            action_dim,
            config.dynamics_hidden,
            config.dynamics_std_floor,
            rng,
        );
        let log_alpha = Tensor::scalar(config.init_temperature.ln() as f32);
        Self {
            actor_opt: AdamState::new(config.actor_optim, actor.mlp().params()),
            critic_opts: critic
                .members()
                .iter()
                .map(|m| AdamState::new(config.critic_optim, m.params()))
                .collect(),
            dynamics_opt: AdamState::new(config.dynamics_optim, dynamics.mlp().params()),
            alpha_opt: AdamState::new(config.temperature_optim, std::slice::from_ref(&log_alpha)),
            actor,
            critic,
            dynamics,
            log_alpha,
        }
    }

    /// Every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor<f32>> {
        let mut out: Vec<&Tensor<f32>> = self.actor.mlp().params().iter().collect();
        for m in self.critic.members().iter().chain(self.critic.targets()) {
            out.extend(m.params());
        }
        out.extend(self.dynamics.mlp().params());
        out.push(&self.log_alpha);
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticStats {
    pub loss: f64,
    pub target_mean: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ActorStats {
    pub loss: f64,
    pub penalty: f64,
    pub entropy: f64,
    pub q_mean: f64,
    pub alpha: f64,
}

/// Summary of one [`Agent::train_step`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainStats {
    /// Mean over the replay-ratio critic updates.
    pub critic_loss: f64,
    pub dynamics_loss: f64,
    pub actor: ActorStats,
}

const STREAM_INIT: u64 = 1;
const STREAM_UPDATE: u64 = 2;

pub struct Agent {
    config: SacConfig,
    state_dim: usize,
    action_dim: usize,
    actor_scale: Vec<f32>,
    params: AgentParams,
    init_rng: RunRng,
    rng: RunRng,
    grad_steps_since_reset: u64,
    total_grad_steps: u64,
    critic_updates: u64,
    dynamics_updates: u64,
    actor_updates: u64,
    resets: u64,
}

fn numerical(stage: &'static str, e: impl std::fmt::Display) -> Error {
    Error::Numerical {
        stage,
        detail: e.to_string(),
    }
}

fn finite_loss(stage: &'static str, v: f32) -> Result<f64> {
    if v.is_finite() {
        Ok(v as f64)
    } else {
        Err(numerical(stage, format!("loss is {v}")))
    }
}

fn normal_tensor(rows: usize, cols: usize, rng: &mut RunRng) -> Tensor<f32> {
    Tensor::from_fn(&[rows, cols], |_| StandardNormal.sample(rng))
}

fn grads_for(grads: &mut crate::autodiff::Gradients<f32>, vars: &[Var], mlp: &Mlp<f32>) -> Vec<Tensor<f32>> {
    vars.iter()
        .zip(mlp.params())
        .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
        .collect()
}

impl Agent {
    /// `actor_scale` bounds the actor's output per dimension (1 for the full action box).
    pub fn new(config: SacConfig, state_dim: usize, action_dim: usize, actor_scale: Vec<f32>, seed: u64) -> Result<Self> {
        config.validate()?;
        if actor_scale.len() != action_dim || actor_scale.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(Error::Config(format!(
                "actor scale must have {action_dim} entries in (0, 1]"
            )));
        }
        let mut init_rng = rng::child(seed, STREAM_INIT);
        let params = AgentParams::init(&config, state_dim, action_dim, &actor_scale, &mut init_rng);
        Ok(Self {
            config,
            state_dim,
            action_dim,
            actor_scale,
            params,
            init_rng,
            rng: rng::child(seed, STREAM_UPDATE),
            grad_steps_since_reset: 0,
            total_grad_steps: 0,
            critic_updates: 0,
            dynamics_updates: 0,
            actor_updates: 0,
            resets: 0,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn params(&self) -> &AgentParams {
        &self.params
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn actor_scale(&self) -> &[f32] {
        &self.actor_scale
    }

    pub fn grad_steps_since_reset(&self) -> u64 {
        self.grad_steps_since_reset
    }

    pub fn total_grad_steps(&self) -> u64 {
        self.total_grad_steps
    }

    /// Critic, dynamics and actor update counts.
    pub fn update_counts(&self) -> (u64, u64, u64) {
        (self.critic_updates, self.dynamics_updates, self.actor_updates)
    }

    pub fn resets(&self) -> u64 {
        self.resets
    }

    fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or_else(|| {
            let log_volume: f64 = self.actor_scale().iter().map(|&s| (s as f64).ln()).sum();
            log_volume - self.action_dim as f64
        })
    }

    /// Current temperature, or zero when entropy terms are disabled.
    pub fn alpha(&self) -> f32 {
        if self.config.entropy {
            self.params.log_alpha.item().exp()
        } else {
            0.0
        }
    }

    /// Stochastic action for exploration.
    pub fn act(&self, state: &[f32], rng: &mut RunRng) -> Result<Vec<f32>> {
        Ok(self.params.actor.sample(state, rng)?.0)
    }

    /// Deterministic action: the squashed Gaussian mean.
    pub fn act_deterministic(&self, state: &[f32]) -> Result<Vec<f32>> {
        Ok(self.params.actor.mode(state)?)
    }

    /// Folds a freshly observed state into the dynamics normalization.
    pub fn observe_state(&mut self, state: &[f32]) {
        self.params.dynamics.observe(state);
    }

    /// Normalized one-step prediction error of the dynamics model.
    pub fn dynamics_error(&self, state: &[f32], action: &[f32], next_state: &[f32]) -> Result<f64> {
        let predicted = self.params.dynamics.predict(state, action)?;
        let err = compute_dyn_error(&predicted, next_state, &self.params.dynamics.state_std());
        if err.is_finite() {
            Ok(err)
        } else {
            Err(numerical("dynamics error", format!("prediction error is {err}")))
        }
    }

    /// One temporal-difference step on every critic member, then a Polyak target update.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<CriticStats> {
        let noise = normal_tensor(batch.len(), self.action_dim, &mut self.rng);
        let p = &mut self.params;
        let alpha = if self.config.entropy { p.log_alpha.item().exp() } else { 0.0 };
        let targets = td_targets(
            &p.actor,
            &p.critic,
            batch,
            &noise,
            alpha,
            self.config.gamma as f32,
            self.config.entropy,
        )?;
        let mut tape = Tape::new();
        let vars = p.critic.bind(&mut tape, true);
        let loss = critic_loss(&mut tape, &p.critic, &vars, batch, &targets, Some(&mut self.rng))?;
        let loss_value = finite_loss("critic", tape.value(loss).item())?;
        let mut grads = tape.backward(loss)?;
        for ((member, opt), v) in p.critic.members_mut().iter_mut().zip(&mut p.critic_opts).zip(&vars) {
            let g = grads_for(&mut grads, v, member);
            let names = member.names().to_vec();
            opt.step(member.params_mut(), &g, &names)
                .map_err(|e| numerical("critic", e))?;
        }
        p.critic.polyak(self.config.tau as f32);
        self.critic_updates += 1;
        let target_mean = targets.data().iter().map(|&v| v as f64).sum::<f64>() / batch.len() as f64;
        Ok(CriticStats {
            loss: loss_value,
            target_mean,
        })
    }

    /// One step on the penalized actor objective, then a temperature step.
    ///
    /// `penalty` carries the feasible region and weight σ; `None` trains the plain objective.
    pub fn actor_update(&mut self, states: &Tensor<f32>, penalty: Option<(&FeasibleRegion, f64)>) -> Result<ActorStats> {
        let (b, _) = states.dims2()?;
        let noise = normal_tensor(b, self.action_dim, &mut self.rng);
        let alpha = self.alpha();
        let target_entropy = self.target_entropy();
        let p = &mut self.params;
        let mut tape = Tape::new();
        let vars = p.actor.mlp().bind(&mut tape, true);
        let out = actor_loss(
            &mut tape,
            &p.actor,
            &vars,
            &p.critic,
            states,
            &noise,
            alpha,
            penalty.map(|(r, s)| (r, s as f32)),
            Some(&mut self.rng),
        )?;
        let loss_value = finite_loss("actor", tape.value(out.loss).item())?;
        let mean_log_prob =
            tape.value(out.log_prob).data().iter().map(|&v| v as f64).sum::<f64>() / b as f64;
        let penalty_value = out.penalty.map_or(0.0, |v| tape.value(v).item() as f64);
        let q_mean = tape.value(out.q_mean).item() as f64;
        let mut grads = tape.backward(out.loss)?;
        let g = grads_for(&mut grads, &vars, p.actor.mlp());
        let names = p.actor.mlp().names().to_vec();
        p.actor_opt
            .step(p.actor.mlp_mut().params_mut(), &g, &names)
            .map_err(|e| numerical("actor", e))?;

        if self.config.entropy && self.config.auto_temperature {
            // d/d(log α) of −log α·(log π + H̄)
            let grad = -(mean_log_prob + target_entropy) as f32;
            p.alpha_opt
                .step(
                    std::slice::from_mut(&mut p.log_alpha),
                    &[Tensor::scalar(grad)],
                    &["log_alpha".to_string()],
                )
                .map_err(|e| numerical("temperature", e))?;
        }
        self.actor_updates += 1;
        Ok(ActorStats {
            loss: loss_value,
            penalty: penalty_value,
            entropy: -mean_log_prob,
            q_mean,
            alpha: self.alpha() as f64,
        })
    }

    /// One step on the dynamics regression loss.
    pub fn dynamics_update(&mut self, batch: &Batch) -> Result<f64> {
        let p = &mut self.params;
        let mut tape = Tape::new();
        let vars = p.dynamics.mlp().bind(&mut tape, true);
        let loss = dynamics_loss(&mut tape, &p.dynamics, &vars, batch)?;
        let value = finite_loss("dynamics", tape.value(loss).item())?;
        let mut grads = tape.backward(loss)?;
        let g = grads_for(&mut grads, &vars, p.dynamics.mlp());
        let names = p.dynamics.mlp().names().to_vec();
        p.dynamics_opt
            .step(p.dynamics.mlp_mut().params_mut(), &g, &names)
            .map_err(|e| numerical("dynamics", e))?;
        self.dynamics_updates += 1;
        Ok(value)
    }

    /// `replay_ratio` critic updates, one dynamics update, one actor update.
    ///
    /// Returns `None` without touching anything while the buffer holds fewer
    /// than `warmup_steps` transitions.
    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer,
        penalty: Option<(&FeasibleRegion, f64)>,
    ) -> Result<Option<TrainStats>> {
        if buffer.len() < self.config.warmup_steps.max(1) {
            return Ok(None);
        }
        let bs = self.config.batch_size;
        let rr = self.config.replay_ratio;
        let mut critic_loss = 0.0;
        for _ in 0..rr {
            let batch = buffer.sample(bs, &mut self.rng)?;
            critic_loss += self.critic_update(&batch)?.loss;
        }
        let batch = buffer.sample(bs, &mut self.rng)?;
        let dynamics_loss = self.dynamics_update(&batch)?;
        let batch = buffer.sample(bs, &mut self.rng)?;
        let actor = self.actor_update(&batch.states, penalty)?;
        self.grad_steps_since_reset += rr as u64;
        self.total_grad_steps += rr as u64;
        Ok(Some(TrainStats {
            critic_loss: critic_loss / rr as f64,
            dynamics_loss,
            actor,
        }))
    }

    /// Reinitializes every network, optimizer and the temperature once the
    /// gradient steps since the last reset exceed the limit. The replay
    /// buffer lives outside the agent and the dynamics normalization statistics are kept.
    pub fn maybe_reset(&mut self) -> bool {
        if self.grad_steps_since_reset <= self.config.max_grad_steps {
            return false;
        }
        self.reset_now();
        true
    }

    /// Unconditional reinitialization; see [`maybe_reset`](Self::maybe_reset).
    pub fn reset_now(&mut self) {
        let stats = self.params.dynamics.stats().clone();
        self.params = AgentParams::init(
            &self.config,
            self.state_dim,
            self.action_dim,
            &self.actor_scale,
            &mut self.init_rng,
        );
        self.params.dynamics.set_stats(stats);
        self.grad_steps_since_reset = 0;
        self.resets += 1;
    }

    pub(crate) fn save(&self, a: &mut Archive, prefix: &str) {
        let p = &self.params;
        a.push_u64s(
            format!("{prefix}.dims"),
            &[self.state_dim as u64, self.action_dim as u64],
        );
        a.push_f32s(format!("{prefix}.actor_scale"), &self.actor_scale);
        a.push_u64s(
            format!("{prefix}.counters"),
            &[
                self.grad_steps_since_reset,
                self.total_grad_steps,
                self.critic_updates,
                self.dynamics_updates,
                self.actor_updates,
                self.resets,
            ],
        );
        p.actor.save(a, &format!("{prefix}.actor"));
        p.critic.save(a, &format!("{prefix}.critic"));
        p.dynamics.save(a, &format!("{prefix}.dynamics"));
        a.push_tensor(format!("{prefix}.log_alpha"), &p.log_alpha);
        save_adam(a, &format!("{prefix}.opt.actor"), &p.actor_opt);
        for (k, o) in p.critic_opts.iter().enumerate() {
            save_adam(a, &format!("{prefix}.opt.critic{k}"), o);
        }
        save_adam(a, &format!("{prefix}.opt.dynamics"), &p.dynamics_opt);
        save_adam(a, &format!("{prefix}.opt.alpha"), &p.alpha_opt);
        rng::save(&self.init_rng, a, &format!("{prefix}.rng.init"));
        rng::save(&self.rng, a, &format!("{prefix}.rng.update"));
    }

    /// Restores an agent saved under `prefix`; network sizes come from `config`.
    pub(crate) fn load(config: SacConfig, a: &Archive, prefix: &str) -> Result<Self> {
        let dims = a.u64s(&format!("{prefix}.dims"))?;
        let [state_dim, action_dim] = dims[..] else {
            return Err(ArchiveError::Type(format!("{prefix}.dims")).into());
        };
        let actor_scale = a.f32s(&format!("{prefix}.actor_scale"))?;
        let mut agent = Agent::new(config, state_dim as usize, action_dim as usize, actor_scale, 0)?;
        let counters = a.u64s(&format!("{prefix}.counters"))?;
        let [g, t, c, d, ac, r] = counters[..] else {
            return Err(ArchiveError::Type(format!("{prefix}.counters")).into());
        };
        (agent.grad_steps_since_reset, agent.total_grad_steps) = (g, t);
        (agent.critic_updates, agent.dynamics_updates, agent.actor_updates, agent.resets) = (c, d, ac, r);
        let p = &mut agent.params;
        p.actor.load(a, &format!("{prefix}.actor"))?;
        p.critic.load(a, &format!("{prefix}.critic"))?;
        p.dynamics.load(a, &format!("{prefix}.dynamics"))?;
        p.log_alpha = a.tensor(&format!("{prefix}.log_alpha"))?;
        load_adam(a, &format!("{prefix}.opt.actor"), &mut p.actor_opt)?;
        for (k, o) in p.critic_opts.iter_mut().enumerate() {
            load_adam(a, &format!("{prefix}.opt.critic{k}"), o)?;
        }
        load_adam(a, &format!("{prefix}.opt.dynamics"), &mut p.dynamics_opt)?;
        load_adam(a, &format!("{prefix}.opt.alpha"), &mut p.alpha_opt)?;
        agent.init_rng = rng::load(a, &format!("{prefix}.rng.init"))?;
        agent.rng = rng::load(a, &format!("{prefix}.rng.update"))?;
        Ok(agent)
    }
}

fn save_adam(a: &mut Archive, prefix: &str, opt: &AdamState) {
    a.push_u64(format!("{prefix}.step"), opt.step);
    for (i, (m, v)) in opt.first.iter().zip(&opt.second).enumerate() {
        a.push_tensor(format!("{prefix}.m{i}"), m);
        a.push_tensor(format!("{prefix}.v{i}"), v);
    }
}

fn load_adam(a: &Archive, prefix: &str, opt: &mut AdamState) -> Result<(), ArchiveError> {
    opt.step = a.u64(&format!("{prefix}.step"))?;
    for i in 0..opt.first.len() {
        let m = a.tensor(&format!("{prefix}.m{i}"))?;
        let v = a.tensor(&format!("{prefix}.v{i}"))?;
        if m.shape() != opt.first[i].shape() || v.shape() != opt.second[i].shape() {
            return Err(ArchiveError::Type(format!("{prefix}.m{i}")));
        }
        opt.first[i] = m;
        opt.second[i] = v;
    }
    Ok(())
}
