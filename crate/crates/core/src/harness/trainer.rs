use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::metrics::{MetricsRow, MetricsWriter, RunMetrics};
use super::{ClampBound, ExperimentConfig, Pathway, RunEcho};
use crate::archive::{Archive, ArchiveError};
use crate::env::{apply_scenario, Env, EnvError, Observation, Scenario, ACTION_DIM, OBS_DIM};
use crate::regulator::{Regulator, RegulatorError};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{self, RunRng};
use crate::sac::Agent;
use crate::{Error, Result};

pub const CHECKPOINT_KIND: &str = "checkpoint";

const STREAM_ENV: u64 = 10;
const STREAM_EXPLORE: u64 = 11;

/// Bookkeeping that is not owned by any component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Counters {
    /// Environment steps over the trainer's whole life, across fine-tuning.
    total_steps: u64,
    /// Steps and falls of the current invocation; row indices derive from these.
    run_steps: u64,
    run_falls: u64,
    episode: u64,
    episode_steps: u64,
    episode_return: f64,
    /// The error gate stays closed until `total_steps` reaches this value.
    gate_open_at: u64,
}

/// Result of a training or fine-tuning invocation.
#[derive(Debug)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    /// Final checkpoint written to the run directory.
    pub checkpoint: PathBuf,
}

/// All state of one run: environment, learner, schedule and buffer.
pub struct Trainer {
    config: ExperimentConfig,
    seed: u64,
    pathway: Pathway,
    env: Env,
    agent: Agent,
    regulator: Regulator,
    buffer: ReplayBuffer,
    rng: RunRng,
    obs: Observation,
    counters: Counters,
}

fn env_error(e: EnvError) -> Error {
    match e {
        EnvError::Diverged { .. } | EnvError::NonFiniteAction { .. } => Error::Numerical {
            stage: "environment",
            detail: e.to_string(),
        },
        other => other.into(),
    }
}

fn regulator_error(e: RegulatorError) -> Error {
    match e {
        RegulatorError::BadError(_) => Error::Numerical {
            stage: "regulator",
            detail: e.to_string(),
        },
        other => other.into(),
    }
}

impl Trainer {
    pub fn new(config: ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let pathway = config.pathway();
        let env_config = apply_scenario(&config.env, config.experiment.scenario);
        let env = Env::new(env_config, rng::child(seed, STREAM_ENV))?;
        let scale = match pathway {
            Pathway::ActionClamp {
                bound: ClampBound::Fixed(b),
            } => b as f32,
            _ => 1.0,
        };
        let agent = Agent::new(config.sac.clone(), OBS_DIM, ACTION_DIM, vec![scale; ACTION_DIM], seed)?;
        let regulator = Regulator::new(config.regulator.clone(), ACTION_DIM)?;
        let buffer = ReplayBuffer::new(OBS_DIM, ACTION_DIM, config.replay.capacity)?;
        let counters = Counters {
            gate_open_at: config.sac.warmup_steps as u64 + config.regulator.gate_grace_steps,
            ..Counters::default()
        };
        Ok(Self {
            obs: env.observation(),
            rng: rng::child(seed, STREAM_EXPLORE),
            config,
            seed,
            pathway,
            env,
            agent,
            regulator,
            buffer,
            counters,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pathway(&self) -> Pathway {
        self.pathway
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn regulator(&self) -> &Regulator {
        &self.regulator
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn total_steps(&self) -> u64 {
        self.counters.total_steps
    }

    /// Mean per-dimension action bound currently in force.
    pub fn epsilon_mean(&self) -> f64 {
        match self.pathway {
            p if p.uses_regulator() => self.regulator.current_region().mean(),
            Pathway::ActionClamp {
                bound: ClampBound::Fixed(b),
            } => b,
            _ => 1.0,
        }
    }

    fn gate_live(&self) -> bool {
        self.counters.total_steps >= self.counters.gate_open_at
            && self.buffer.len() >= self.config.sac.warmup_steps
    }

    /// One environment step followed by the learner updates.
    pub fn step(&mut self) -> Result<MetricsRow> {
        let state = self.obs.0.clone();
        let sampled = self.agent.act(&state, &mut self.rng)?;
        let action = match self.pathway {
            Pathway::ActionClamp {
                bound: ClampBound::Scheduled,
            } => self.regulator.current_region().clip(&sampled),
            _ => sampled,
        };
        let result = self.env.step(&action).map_err(env_error)?;
        let train_reward = match self.pathway {
            Pathway::RewardCost { lambda } => {
                result.reward - lambda * action.iter().map(|&a| (a as f64).powi(2)).sum::<f64>()
            }
            _ => result.reward,
        };
        let next = &result.observation;
        self.buffer.insert(Transition {
            state: state.clone(),
            action: action.clone(),
            reward: train_reward as f32,
            next_state: next.0.clone(),
            terminal: result.terminated,
            fall: result.info.fall,
        })?;
        self.agent.observe_state(next);
        let dyn_error = self.agent.dynamics_error(&state, &action, next)?;
        self.counters.total_steps += 1;
        self.counters.run_steps += 1;

        let mut shrink = false;
        if self.pathway.uses_regulator() {
            if self.gate_live() {
                let obs = if self.pathway.adaptive() {
                    self.regulator.observe_error(dyn_error)
                } else {
                    self.regulator.observe_error_fixed(dyn_error)
                }
                .map_err(regulator_error)?;
                shrink = obs.shrink;
            } else {
                self.regulator.advance();
            }
        }

        let region = matches!(self.pathway, Pathway::ActorPenalty { .. }).then(|| self.regulator.current_region());
        let sigma = self.config.regulator.sigma;
        let stats = self
            .agent
            .train_step(&self.buffer, region.as_ref().map(|r| (r, sigma)))?;
        let reset = self.agent.maybe_reset();
        if reset {
            self.counters.gate_open_at = self.counters.total_steps + self.config.regulator.gate_grace_steps;
            self.regulator.reset_smoother();
            log::info!("learner reset at step {}", self.counters.total_steps);
        }

        let c = &mut self.counters;
        c.episode_steps += 1;
        c.episode_return += result.reward;
        if result.info.fall {
            c.run_falls += 1;
        }
        let episode = c.episode;
        let (episode_return, episode_length) = if result.done() {
            let ended = (Some(c.episode_return), Some(c.episode_steps));
            c.episode += 1;
            c.episode_steps = 0;
            c.episode_return = 0.0;
            self.obs = self.env.reset();
            ended
        } else {
            self.obs = result.observation.clone();
            (None, None)
        };

        Ok(MetricsRow {
            step: self.counters.run_steps,
            episode,
            reward: result.reward,
            train_reward,
            forward_velocity: result.info.forward_velocity,
            episode_return,
            episode_length,
            fall: result.info.fall,
            falls: self.counters.run_falls,
            epsilon_mean: self.epsilon_mean(),
            dyn_error,
            dyn_error_ema: if self.pathway.uses_regulator() {
                self.regulator.smoothed_error()
            } else {
                None
            },
            shrink,
            reset,
            critic_loss: stats.map(|s| s.critic_loss),
            actor_loss: stats.map(|s| s.actor.loss),
            dynamics_loss: stats.map(|s| s.dynamics_loss),
            penalty: stats.map(|s| s.actor.penalty),
            q_mean: stats.map(|s| s.actor.q_mean),
            alpha: stats.map(|s| s.actor.alpha),
            entropy: stats.map(|s| s.actor.entropy),
        })
    }

    /// Runs `steps` environment steps, writing `metrics.csv` and a final checkpoint into `dir`.
    ///
    /// On failure the metrics written so far stay on disk and the current
    /// state is saved as `checkpoint_abort` for inspection.
    pub fn run(&mut self, steps: u64, dir: &Path) -> Result<RunOutcome> {
        std::fs::create_dir_all(dir)?;
        RunEcho {
            seed: self.seed,
            pathway: self.pathway,
            config: self.config.clone(),
        }
        .write(dir)?;
        let mut writer = MetricsWriter::create(&dir.join("metrics.csv"))?;
        self.counters.run_steps = 0;
        self.counters.run_falls = 0;
        let every = self.config.experiment.checkpoint_every;
        let mut rows = Vec::with_capacity(steps.min(1 << 20) as usize);
        for _ in 0..steps {
            let row = match self.step() {
                Ok(row) => row,
                Err(e) => {
                    log::error!("run aborted after {} steps: {e}", self.counters.run_steps);
                    if let Err(save) = self.save(dir, "checkpoint_abort") {
                        log::error!("could not save abort checkpoint: {save}");
                    }
                    return Err(e);
                }
            };
            writer.write(&row)?;
            if row.step % 10_000 == 0 {
                log::info!(
                    "step {} falls {} epsilon {:.3} velocity {:.3}",
                    row.step,
                    row.falls,
                    row.epsilon_mean,
                    row.forward_velocity
                );
            }
            rows.push(row);
            if every > 0 && self.counters.run_steps % every == 0 {
                self.save(dir, &format!("checkpoint_{}", self.counters.run_steps))?;
            }
        }
        let checkpoint = self.save(dir, "checkpoint")?;
        Ok(RunOutcome {
            metrics: RunMetrics { rows },
            checkpoint,
        })
    }

    /// Moves the run to another scenario. The error gate opens immediately
    /// because the learned dynamics model is what detects the change.
    pub fn switch_scenario(&mut self, scenario: Scenario) -> Result<()> {
        self.config.experiment.scenario = scenario;
        self.config.validate()?;
        let env_config = apply_scenario(&self.config.env, scenario);
        self.env = Env::new(env_config, self.env.rng().clone())?;
        self.obs = self.env.observation();
        let c = &mut self.counters;
        c.episode_steps = 0;
        c.episode_return = 0.0;
        c.gate_open_at = c.total_steps;
        Ok(())
    }

    /// Serializes everything except the replay contents, which go to `replay_file`.
    pub fn to_archive(&self, replay_file: &str, replay_checksum: u32) -> Archive {
        let mut a = Archive::new(CHECKPOINT_KIND);
        a.push_str("config", &self.config.to_toml());
        a.push_u64("seed", self.seed);
        let c = &self.counters;
        a.push_u64s(
            "counters",
            &[
                c.total_steps,
                c.run_steps,
                c.run_falls,
                c.episode,
                c.episode_steps,
                c.gate_open_at,
            ],
        );
        a.push_f64("episode_return", c.episode_return);
        a.push_f32s("observation", &self.obs.0);
        a.push_str("replay.file", replay_file);
        a.push_u64("replay.checksum", replay_checksum as u64);
        self.agent.save(&mut a, "agent");
        self.regulator.save(&mut a, "regulator");
        self.env.save(&mut a, "env");
        rng::save(&self.rng, &mut a, "rng.explore");
        a
    }

    /// Writes `<name>.replay` and `<name>.aprl` into `dir`; returns the checkpoint path.
    pub fn save(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        let replay_file = format!("{name}.replay");
        let replay = self.buffer.to_archive().to_bytes();
        let checksum = crc32fast::hash(&replay);
        let tmp = dir.join(format!("{name}.replay.tmp"));
        std::fs::write(&tmp, &replay)?;
        std::fs::rename(&tmp, dir.join(&replay_file))?;
        let path = dir.join(format!("{name}.aprl"));
        self.to_archive(&replay_file, checksum).write(&path)?;
        Ok(path)
    }

    /// Restores a trainer from a checkpoint and the replay file it references.
    pub fn load(path: &Path) -> Result<Self> {
        let a = Archive::read(path)?;
        a.expect_kind(CHECKPOINT_KIND)?;
        let config = ExperimentConfig::from_toml(&a.string("config")?)?;
        let seed = a.u64("seed")?;
        let replay_path = path
            .parent()
            .unwrap_or(Path::new("."))
            .join(a.string("replay.file")?);
        let replay_bytes = std::fs::read(&replay_path)?;
        if crc32fast::hash(&replay_bytes) as u64 != a.u64("replay.checksum")? {
            return Err(ArchiveError::Corrupt(format!("{} does not match its checkpoint", replay_path.display())).into());
        }
        let buffer = ReplayBuffer::from_archive(&Archive::from_bytes(&replay_bytes)?)?;
        let counters = a.u64s("counters")?;
        let [total_steps, run_steps, run_falls, episode, episode_steps, gate_open_at] = counters[..] else {
            return Err(ArchiveError::Type("counters".into()).into());
        };
        let mut trainer = Trainer::new(config, seed)?;
        trainer.counters = Counters {
            total_steps,
            run_steps,
            run_falls,
            episode,
            episode_steps,
            episode_return: a.f64("episode_return")?,
            gate_open_at,
        };
        trainer.agent = Agent::load(trainer.config.sac.clone(), &a, "agent")?;
        trainer.regulator = Regulator::load(trainer.config.regulator.clone(), &a, "regulator")?;
        trainer.env.load(&a, "env")?;
        trainer.rng = rng::load(&a, "rng.explore")?;
        trainer.obs = Observation(a.f32s("observation")?);
        if buffer.state_dim() != OBS_DIM || buffer.action_dim() != ACTION_DIM {
            return Err(ArchiveError::Corrupt("replay dimensions do not match the environment".into()).into());
        }
        trainer.buffer = buffer;
        Ok(trainer)
    }
}

/// Trains one seed from scratch into `dir`.
pub fn run_training(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<RunOutcome> {
    let mut trainer = Trainer::new(config.clone(), seed)?;
    trainer.run(config.experiment.steps, dir)
}

/// Resumes `checkpoint` in `scenario` for `steps` more steps, writing into `dir`.
pub fn run_finetune(checkpoint: &Path, scenario: Scenario, steps: u64, dir: &Path) -> Result<RunOutcome> {
    let mut trainer = Trainer::load(checkpoint)?;
    trainer.switch_scenario(scenario)?;
    trainer.config.experiment.steps = steps;
    trainer.run(steps, dir)
}

/// Runs independent jobs on up to `workers` threads. Results keep the job order.
pub fn run_many<J, T, F>(jobs: Vec<J>, workers: usize, f: F) -> Vec<Result<T>>
where
    J: Send,
    T: Send,
    F: Fn(J) -> Result<T> + Sync,
{
    let n = jobs.len();
    let queue: Vec<Mutex<Option<J>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let job = queue[i].lock().unwrap().take().expect("each job runs once");
                *results[i].lock().unwrap() = Some(f(job));
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.into_inner().unwrap().expect("every job ran"))
        .collect()
}
