use std::fmt::Write as _;
use std::path::Path;

use super::metrics::mean;
use super::{ClampBound, Pathway, Trainer};
use crate::env::{apply_scenario, Env, EnvConfig, Scenario};
use crate::regulator::FeasibleRegion;
use crate::rng;
use crate::sac::Agent;
use crate::{Error, Result};

const STREAM_EVAL: u64 = 20;

/// One deterministic rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeReport {
    pub task_return: f64,
    /// Distance travelled along the ground, in meters.
    pub distance: f64,
    pub steps: u32,
    pub mean_velocity: f64,
    pub fell: bool,
    /// Seconds until the course length was first covered.
    pub time_to_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub course_length: f64,
    /// Episode duration cap in seconds; unfinished courses count as this.
    pub time_limit: f64,
    pub episodes: Vec<EpisodeReport>,
}

const EVAL_HEADER: &str = "episode,task_return,distance,steps,mean_velocity,fell,time_to_distance";

impl EvalReport {
    pub fn mean_velocity(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.mean_velocity)).unwrap_or(0.0)
    }

    /// Sample standard deviation of the per-episode velocities.
    pub fn std_velocity(&self) -> f64 {
        let n = self.episodes.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean_velocity();
        let ss: f64 = self.episodes.iter().map(|e| (e.mean_velocity - m).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    }

    pub fn falls_per_episode(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.fell as u8 as f64)).unwrap_or(0.0)
    }

    pub fn reached(&self) -> usize {
        self.episodes.iter().filter(|e| e.time_to_distance.is_some()).count()
    }

    /// Mean time-to-distance with unfinished episodes censored at the time limit.
    pub fn mean_time_to_distance(&self) -> f64 {
        mean(
            self.episodes
                .iter()
                .map(|e| e.time_to_distance.unwrap_or(self.time_limit)),
        )
        .unwrap_or(self.time_limit)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_HEADER}\n");
        for (i, e) in self.episodes.iter().enumerate() {
            let ttd = e.time_to_distance.map(|t| t.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{i},{},{},{},{},{},{ttd}",
                e.task_return, e.distance, e.steps, e.mean_velocity, e.fell as u8
            )
            .unwrap();
        }
        out
    }

    /// Parses the per-episode rows written by [`to_csv`](Self::to_csv).
    pub fn episodes_from_csv(text: &str) -> Result<Vec<EpisodeReport>> {
        let mut lines = text.lines();
        if lines.next() != Some(EVAL_HEADER) {
            return Err(Error::Config("unexpected evaluation header".into()));
        }
        lines
            .map(|line| {
                let c: Vec<&str> = line.split(',').collect();
                let bad = || Error::Config(format!("bad evaluation row '{line}'"));
                if c.len() != 7 {
                    return Err(bad());
                }
                let f = |i: usize| c[i].parse::<f64>().map_err(|_| bad());
                Ok(EpisodeReport {
                    task_return: f(1)?,
                    distance: f(2)?,
                    steps: c[3].parse().map_err(|_| bad())?,
                    mean_velocity: f(4)?,
                    fell: c[5] == "1",
                    time_to_distance: if c[6].is_empty() { None } else { Some(f(6)?) },
                })
            })
            .collect()
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} episodes, velocity {:.4} ± {:.4} m/s, falls/episode {:.2}, time-to-{}m {:.2} s ({} reached)",
            self.scenario,
            self.episodes.len(),
            self.mean_velocity(),
            self.std_velocity(),
            self.falls_per_episode(),
            self.course_length,
            self.mean_time_to_distance(),
            self.reached()
        )
    }
}

/// Rolls out the deterministic policy for `episodes` episodes.
///
/// `clip` bounds the executed actions, matching how a clipped policy was trained.
pub fn evaluate(
    agent: &Agent,
    env_config: &EnvConfig,
    scenario: Scenario,
    clip: Option<&FeasibleRegion>,
    episodes: usize,
    seed: u64,
    course_length: f64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let config = apply_scenario(env_config, scenario);
    let dt = config.control_dt();
    let time_limit = config.max_episode_steps as f64 * dt;
    let mut env = Env::new(config, rng::child(seed, STREAM_EVAL))?;
    let mut reports = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let mut obs = if k == 0 { env.observation() } else { env.reset() };
        let mut report = EpisodeReport {
            task_return: 0.0,
            distance: 0.0,
            steps: 0,
            mean_velocity: 0.0,
            fell: false,
            time_to_distance: None,
        };
        loop {
            let mut action = agent.act_deterministic(&obs)?;
            if let Some(region) = clip {
                action = region.clip(&action);
            }
            let r = env.step(&action)?;
            report.steps += 1;
            report.task_return += r.reward;
            report.distance += r.info.forward_velocity * dt;
            if report.time_to_distance.is_none() && report.distance >= course_length {
                report.time_to_distance = Some(report.steps as f64 * dt);
            }
            if r.done() {
                report.fell = r.terminated;
                break;
            }
            obs = r.observation;
        }
        report.mean_velocity = report.distance / (report.steps as f64 * dt);
        reports.push(report);
    }
    Ok(EvalReport {
        scenario,
        course_length,
        time_limit,
        episodes: reports,
    })
}

/// Evaluates the policy stored in a checkpoint.
pub fn run_eval(checkpoint: &Path, scenario: Scenario, episodes: usize, seed: u64) -> Result<EvalReport> {
    let trainer = Trainer::load(checkpoint)?;
    let region = match trainer.pathway() {
        Pathway::ActionClamp {
            bound: ClampBound::Scheduled,
        } => Some(trainer.regulator().current_region()),
        _ => None,
    };
    let config = trainer.config();
    evaluate(
        trainer.agent(),
        &config.env,
        scenario,
        region.as_ref(),
        episodes,
        seed,
        config.experiment.course_length,
    )
}
