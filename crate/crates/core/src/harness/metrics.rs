use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use crate::{Error, Result};

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: [&str; 21] = [
    "step",
    "episode",
    "reward",
    "train_reward",
    "forward_velocity",
    "episode_return",
    "episode_length",
    "fall",
    "falls",
    "epsilon_mean",
    "dyn_error",
    "dyn_error_ema",
    "shrink",
    "reset",
    "critic_loss",
    "actor_loss",
    "dynamics_loss",
    "penalty",
    "q_mean",
    "alpha",
    "entropy",
];

/// One control step. Optional fields are written as empty cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    /// 1-based step index within the run.
    pub step: u64,
    pub episode: u64,
    /// Task reward from the environment.
    pub reward: f64,
    /// Reward stored for learning (differs only under an action cost).
    pub train_reward: f64,
    pub forward_velocity: f64,
    /// Task return of the episode that ended on this step.
    pub episode_return: Option<f64>,
    pub episode_length: Option<u64>,
    pub fall: bool,
    /// Falls since the start of the run.
    pub falls: u64,
    pub epsilon_mean: f64,
    pub dyn_error: f64,
    pub dyn_error_ema: Option<f64>,
    pub shrink: bool,
    pub reset: bool,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub dynamics_loss: Option<f64>,
    pub penalty: Option<f64>,
    pub q_mean: Option<f64>,
    pub alpha: Option<f64>,
    pub entropy: Option<f64>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        [
            self.step.to_string(),
            self.episode.to_string(),
            self.reward.to_string(),
            self.train_reward.to_string(),
            self.forward_velocity.to_string(),
            opt(self.episode_return),
            opt(self.episode_length),
            (self.fall as u8).to_string(),
            self.falls.to_string(),
            self.epsilon_mean.to_string(),
            self.dyn_error.to_string(),
            opt(self.dyn_error_ema),
            (self.shrink as u8).to_string(),
            (self.reset as u8).to_string(),
            opt(self.critic_loss),
            opt(self.actor_loss),
            opt(self.dynamics_loss),
            opt(self.penalty),
            opt(self.q_mean),
            opt(self.alpha),
            opt(self.entropy),
        ]
        .join(",")
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != METRICS_HEADER.len() {
            return Err(Error::Config(format!(
                "metrics row has {} cells, expected {}",
                cells.len(),
                METRICS_HEADER.len()
            )));
        }
        let bad = |i: usize| Error::Config(format!("bad value '{}' in column {}", cells[i], METRICS_HEADER[i]));
        let f = |i: usize| cells[i].parse::<f64>().map_err(|_| bad(i));
        let u = |i: usize| cells[i].parse::<u64>().map_err(|_| bad(i));
        let b = |i: usize| match cells[i] {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(i)),
        };
        let of = |i: usize| (!cells[i].is_empty()).then(|| f(i)).transpose();
        let ou = |i: usize| (!cells[i].is_empty()).then(|| u(i)).transpose();
        Ok(Self {
            step: u(0)?,
            episode: u(1)?,
            reward: f(2)?,
            train_reward: f(3)?,
            forward_velocity: f(4)?,
            episode_return: of(5)?,
            episode_length: ou(6)?,
            fall: b(7)?,
            falls: u(8)?,
            epsilon_mean: f(9)?,
            dyn_error: f(10)?,
            dyn_error_ema: of(11)?,
            shrink: b(12)?,
            reset: b(13)?,
            critic_loss: of(14)?,
            actor_loss: of(15)?,
            dynamics_loss: of(16)?,
            penalty: of(17)?,
            q_mean: of(18)?,
            alpha: of(19)?,
            entropy: of(20)?,
        })
    }
}

/// Appends rows to a CSV file, flushing after each one.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", METRICS_HEADER.join(","))?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv())?;
        self.out.flush()?;
        Ok(())
    }
}

/// The rows of one run, with the aggregates the comparisons use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
}

impl RunMetrics {
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        let mut lines = file.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header != METRICS_HEADER.join(",") {
            return Err(Error::Config(format!("{}: unexpected metrics header", path.display())));
        }
        let rows = lines
            .map(|l| MetricsRow::from_csv(&l?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Falls at the end of the run.
    pub fn total_falls(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.falls)
    }

    pub fn shrink_count(&self) -> usize {
        self.rows.iter().filter(|r| r.shrink).count()
    }

    pub fn reset_count(&self) -> usize {
        self.rows.iter().filter(|r| r.reset).count()
    }

    fn window(&self, steps: Range<u64>) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(move |r| steps.contains(&r.step))
    }

    /// Mean per-step forward velocity over the given 1-based steps.
    pub fn mean_velocity(&self, steps: Range<u64>) -> Option<f64> {
        mean(self.window(steps).map(|r| r.forward_velocity))
    }

    pub fn mean_reward(&self, steps: Range<u64>) -> Option<f64> {
        mean(self.window(steps).map(|r| r.reward))
    }

    /// Mean task return of the episodes that ended within the given steps.
    pub fn mean_episode_return(&self, steps: Range<u64>) -> Option<f64> {
        mean(self.window(steps).filter_map(|r| r.episode_return))
    }

    /// Steps `1..=n` as a range.
    pub fn first(&self, n: u64) -> Range<u64> {
        1..n + 1
    }

    /// The last `n` steps of the run as a range.
    pub fn last(&self, n: u64) -> Range<u64> {
        let end = self.rows.last().map_or(0, |r| r.step);
        end.saturating_sub(n) + 1..end + 1
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
