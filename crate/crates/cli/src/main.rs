//! Command-line front end: `train`, `finetune`, `eval`, `compare`.
//!
//! Exit codes: 0 on success, 1 for configuration or I/O problems, 2 when a
//! run aborts on a non-finite training signal.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aprl_core::harness::{self, run_dir_name, RunOutcome};
use aprl_core::{Error, ExperimentConfig, Scenario, Variant};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aprl", version, about = "Train and evaluate regularized locomotion agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch; writes one directory per seed under `--out`.
    Train(TrainArgs),
    /// Continue training a checkpoint in another scenario.
    Finetune(FinetuneArgs),
    /// Roll out the deterministic policy of a checkpoint.
    Eval(EvalArgs),
    /// Aggregate every run below `--out` by variant and scenario.
    Compare(CompareArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 3000)]
    steps: u64,
    /// Run directory for the fine-tuning metrics and checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    /// Defaults to the scenario the checkpoint was trained in.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory that receives `eval.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    out: PathBuf,
}

fn parse_scenario(s: &str) -> Result<Scenario, Error> {
    s.parse().map_err(|e: aprl_core::env::EnvError| Error::Config(e.to_string()))
}

fn train(args: TrainArgs) -> Result<(), Error> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let run = &mut config.experiment;
    if let Some(v) = &args.variant {
        run.variant = v.parse::<Variant>()?;
    }
    if let Some(s) = &args.scenario {
        run.scenario = parse_scenario(s)?;
    }
    if let Some(n) = args.steps {
        run.steps = n;
    }
    if let Some(out) = args.out {
        run.out_dir = out;
    }
    if let Some(seed) = args.seed {
        run.seeds = vec![seed];
    }
    config.validate()?;
    let run = &config.experiment;
    if run.seeds.is_empty() {
        return Err(Error::Config("no seeds to train".into()));
    }
    let jobs: Vec<(u64, PathBuf)> = run
        .seeds
        .iter()
        .map(|&s| (s, run.out_dir.join(run_dir_name(run.variant, run.scenario, s))))
        .collect();
    let results = harness::run_many(jobs.clone(), run.workers, |(seed, dir)| {
        log::info!("training {} on {} seed {seed} into {}", run.variant, run.scenario, dir.display());
        harness::run_training(&config, seed, &dir)
    });
    let mut first_error = None;
    for ((seed, _), result) in jobs.iter().zip(results) {
        match result {
            Ok(out) => report(*seed, &out),
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn report(seed: u64, out: &RunOutcome) {
    let m = &out.metrics;
    let tail = m.last((m.len() as u64 / 10).max(1));
    println!(
        "seed {seed}: {} steps, {} falls, {} shrinks, {} resets, final velocity {:.4} m/s, checkpoint {}",
        m.len(),
        m.total_falls(),
        m.shrink_count(),
        m.reset_count(),
        m.mean_velocity(tail).unwrap_or(0.0),
        out.checkpoint.display()
    );
}

fn finetune(args: FinetuneArgs) -> Result<(), Error> {
    let scenario = parse_scenario(&args.scenario)?;
    let out = harness::run_finetune(&args.checkpoint, scenario, args.steps, &args.out)?;
    report(harness::Trainer::load(&out.checkpoint)?.seed(), &out);
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Error> {
    let trainer = harness::Trainer::load(&args.checkpoint)?;
    let scenario = match &args.scenario {
        Some(s) => parse_scenario(s)?,
        None => trainer.config().experiment.scenario,
    };
    let episodes = args.episodes.unwrap_or(trainer.config().experiment.eval_episodes);
    let report = harness::run_eval(&args.checkpoint, scenario, episodes, args.seed)?;
    println!("{}", report.summary());
    if let Some(dir) = args.out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("eval.csv"), report.to_csv())?;
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), Error> {
    let (runs, rows) = harness::compare(&args.out)?;
    if runs.is_empty() {
        return Err(Error::Config(format!("no runs found under {}", args.out.display())));
    }
    let summary = harness::write_summary(&rows);
    std::fs::write(args.out.join("summary.csv"), &summary)?;
    print_table(&rows, &args.out.join("summary.csv"));
    Ok(())
}

fn print_table(rows: &[harness::SummaryRow], path: &Path) {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    println!(
        "{:<16} {:<16} {:>4} {:>8} {:>10} {:>10} {:>10} {:>8}",
        "variant", "scenario", "runs", "falls", "early_ret", "final_vel", "ttd", "rel_ttd"
    );
    for r in rows {
        println!(
            "{:<16} {:<16} {:>4} {:>8.1} {:>10} {:>10} {:>10} {:>8}",
            r.variant.id(),
            r.scenario.to_string(),
            r.runs,
            r.falls_median,
            f(r.early_return_median),
            f(r.final_velocity_median),
            f(r.time_to_distance_median),
            f(r.relative_time)
        );
    }
    println!("summary written to {}", path.display());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Finetune(a) => finetune(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_numerical() => {
            eprintln!("numerical abort: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
