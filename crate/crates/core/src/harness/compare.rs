use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::eval::EvalReport;
use super::metrics::{mean, RunMetrics};
use super::{RunEcho, Variant};
use crate::env::Scenario;
use crate::Result;

/// Headline numbers of one completed run directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub variant: Variant,
    pub scenario: Scenario,
    pub seed: u64,
    pub steps: u64,
    pub falls: u64,
    /// Mean episode return over the first tenth of the run.
    pub early_return: Option<f64>,
    pub mean_return: Option<f64>,
    /// Mean forward velocity over the last tenth of the run.
    pub final_velocity: Option<f64>,
    pub shrinks: usize,
    pub resets: usize,
    /// From `eval.csv`, when the run directory has one.
    pub eval_velocity: Option<f64>,
    pub eval_time_to_distance: Option<f64>,
}

impl RunSummary {
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let echo = RunEcho::read(dir)?;
        let metrics = RunMetrics::read_csv(&dir.join("metrics.csv"))?;
        let steps = metrics.rows.last().map_or(0, |r| r.step);
        let tenth = (steps / 10).max(1);
        let (eval_velocity, eval_time_to_distance) = match std::fs::read_to_string(dir.join("eval.csv")) {
            Ok(text) => {
                let episodes = EvalReport::episodes_from_csv(&text)?;
                let env = crate::env::apply_scenario(&echo.config.env, echo.config.experiment.scenario);
                let report = EvalReport {
                    scenario: echo.config.experiment.scenario,
                    course_length: echo.config.experiment.course_length,
                    time_limit: env.max_episode_steps as f64 * env.control_dt(),
                    episodes,
                };
                (Some(report.mean_velocity()), Some(report.mean_time_to_distance()))
            }
            Err(_) => (None, None),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            variant: echo.config.experiment.variant,
            scenario: echo.config.experiment.scenario,
            seed: echo.seed,
            steps,
            falls: metrics.total_falls(),
            early_return: metrics.mean_episode_return(metrics.first(tenth)),
            mean_return: metrics.mean_episode_return(0..u64::MAX),
            final_velocity: metrics.mean_velocity(metrics.last(tenth)),
            shrinks: metrics.shrink_count(),
            resets: metrics.reset_count(),
            eval_velocity,
            eval_time_to_distance,
        })
    }
}

/// Aggregate over the seeds of one variant × scenario cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub scenario: Scenario,
    pub runs: usize,
    pub falls_median: f64,
    pub early_return_median: Option<f64>,
    pub return_mean: Option<f64>,
    pub final_velocity_median: Option<f64>,
    pub final_velocity_mean: Option<f64>,
    pub final_velocity_std: Option<f64>,
    pub eval_velocity_median: Option<f64>,
    pub time_to_distance_median: Option<f64>,
    /// Time-to-distance divided by the restricted baseline's in the same scenario.
    pub relative_time: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values.iter().copied())?;
    if values.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(RunEcho::FILE).is_file() && dir.join("metrics.csv").is_file() {
        out.push(dir.to_path_buf());
    }
    let mut children: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for child in children {
        find_runs(&child, out)?;
    }
    Ok(())
}

/// Summarizes every run directory below `root` and aggregates by variant × scenario.
pub fn compare(root: &Path) -> Result<(Vec<RunSummary>, Vec<SummaryRow>)> {
    let mut dirs = Vec::new();
    find_runs(root, &mut dirs)?;
    let runs = dirs
        .iter()
        .map(|d| RunSummary::from_dir(d))
        .collect::<Result<Vec<_>>>()?;
    let mut cells: BTreeMap<(Variant, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in &runs {
        cells.entry((r.variant, r.scenario.to_string())).or_default().push(r);
    }
    let collect = |rs: &[&RunSummary], f: &dyn Fn(&RunSummary) -> Option<f64>| -> Vec<f64> {
        rs.iter().filter_map(|r| f(r)).collect()
    };
    let mut rows: Vec<SummaryRow> = cells
        .values()
        .map(|rs| {
            let velocities = collect(rs, &|r| r.final_velocity);
            SummaryRow {
                variant: rs[0].variant,
                scenario: rs[0].scenario,
                runs: rs.len(),
                falls_median: median(&collect(rs, &|r| Some(r.falls as f64))).unwrap_or(0.0),
                early_return_median: median(&collect(rs, &|r| r.early_return)),
                return_mean: mean(collect(rs, &|r| r.mean_return).into_iter()),
                final_velocity_median: median(&velocities),
                final_velocity_mean: mean(velocities.iter().copied()),
                final_velocity_std: std_dev(&velocities),
                eval_velocity_median: median(&collect(rs, &|r| r.eval_velocity)),
                time_to_distance_median: median(&collect(rs, &|r| r.eval_time_to_distance)),
                relative_time: None,
            }
        })
        .collect();
    let baseline: BTreeMap<String, f64> = rows
        .iter()
        .filter(|r| r.variant == Variant::Restricted)
        .filter_map(|r| Some((r.scenario.to_string(), r.time_to_distance_median?)))
        .collect();
    for row in &mut rows {
        if let (Some(t), Some(b)) = (row.time_to_distance_median, baseline.get(&row.scenario.to_string())) {
            row.relative_time = Some(t / b);
        }
    }
    Ok((runs, rows))
}

const SUMMARY_HEADER: &str = "variant,scenario,runs,falls_median,early_return_median,return_mean,\
final_velocity_median,final_velocity_mean,final_velocity_std,eval_velocity_median,\
time_to_distance_median,relative_time";

/// CSV form of the aggregate table.
pub fn write_summary(rows: &[SummaryRow]) -> String {
    let o = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.variant,
            r.scenario,
            r.runs,
            r.falls_median,
            o(r.early_return_median),
            o(r.return_mean),
            o(r.final_velocity_median),
            o(r.final_velocity_mean),
            o(r.final_velocity_std),
            o(r.eval_velocity_median),
            o(r.time_to_distance_median),
            o(r.relative_time),
        )
        .unwrap();
    }
    out
}
