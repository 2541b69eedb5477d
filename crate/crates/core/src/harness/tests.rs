use super::*;
use crate::archive::Archive;
use tempfile::tempdir;

fn tiny(variant: Variant) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.experiment.variant = variant;
    c.experiment.steps = 150;
    c.sac.actor_hidden = 16;
    c.sac.critic_hidden = 16;
    c.sac.dynamics_hidden = 16;
    c.sac.batch_size = 16;
    c.sac.replay_ratio = 1;
    c.sac.warmup_steps = 40;
    c.regulator.growth_steps = 200;
    c.regulator.gate_grace_steps = 10;
    c.replay.capacity = 5000;
    c
}

#[test]
fn variants_parse_and_reject_unknown() {
    for v in Variant::ALL {
        assert_eq!(v.id().parse::<Variant>().unwrap(), v);
    }
    assert!(matches!("aprl2".parse::<Variant>(), Err(Error::Config(_))));
}

#[test]
fn at_most_one_mechanism_per_variant() {
    let c = ExperimentConfig::default();
    for v in Variant::ALL {
        let p = apply_variant(v, &c);
        let active = p.flags().iter().filter(|&&f| f).count();
        assert_eq!(active, usize::from(v != Variant::NoReg), "{v}");
    }
    assert_eq!(apply_variant(Variant::Aprl, &c), Pathway::ActorPenalty { adaptive: true });
    assert!(!apply_variant(Variant::NonAdaptive, &c).adaptive());
}

#[test]
fn config_round_trips_through_toml() {
    let mut c = tiny(Variant::HardConstraint);
    c.experiment.scenario = Scenario::FrozenJoint(1);
    let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(ExperimentConfig::from_toml("[experiment]\nvariantt = \"aprl\"\n").is_err());
    assert!(ExperimentConfig::from_toml("[experiment]\nvariant = \"fast\"\n").is_err());
    assert!(ExperimentConfig::from_toml("[sac]\ngamma = 1.5\n").is_err());
    let c = ExperimentConfig::from_toml("[experiment]\nvariant = \"no_reg\"\nscenario = \"slope:3\"\n").unwrap();
    assert_eq!(c.experiment.variant, Variant::NoReg);
    assert_eq!(c.experiment.scenario, Scenario::Slope(3.0));
}

#[test]
fn zero_steps_gives_empty_metrics_and_initial_checkpoint() {
    let dir = tempdir().unwrap();
    let mut c = tiny(Variant::Aprl);
    c.experiment.steps = 0;
    let out = run_training(&c, 1, dir.path()).unwrap();
    assert!(out.metrics.is_empty());
    assert!(out.checkpoint.is_file());
    assert!(RunMetrics::read_csv(&dir.path().join("metrics.csv")).unwrap().is_empty());
    let t = Trainer::load(&out.checkpoint).unwrap();
    assert_eq!(t.total_steps(), 0);
    assert_eq!(t.agent().update_counts(), (0, 0, 0));
}

#[test]
fn identical_seeds_give_identical_metrics_files() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let c = tiny(Variant::Aprl);
    run_training(&c, 3, a.path()).unwrap();
    run_training(&c, 3, b.path()).unwrap();
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let other = tempdir().unwrap();
    run_training(&c, 4, other.path()).unwrap();
    assert_ne!(read(&a), read(&other));
}

#[test]
fn metrics_file_parses_back() {
    let dir = tempdir().unwrap();
    let out = run_training(&tiny(Variant::NoReg), 5, dir.path()).unwrap();
    let back = RunMetrics::read_csv(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(back, out.metrics);
    let steps: Vec<u64> = back.rows.iter().map(|r| r.step).collect();
    assert_eq!(steps, (1..=150).collect::<Vec<_>>());
    assert!(back.rows.windows(2).all(|w| w[1].falls >= w[0].falls));
    // Losses appear once the warm-up fills the buffer.
    assert!(back.rows[38].critic_loss.is_none());
    assert!(back.rows[39].critic_loss.is_some());
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempdir().unwrap();
    let out = run_training(&tiny(Variant::Aprl), 6, dir.path()).unwrap();
    let t = Trainer::load(&out.checkpoint).unwrap();
    let again = tempdir().unwrap();
    let second = t.save(again.path(), "checkpoint").unwrap();
    assert_eq!(std::fs::read(&out.checkpoint).unwrap(), std::fs::read(second).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("checkpoint.replay")).unwrap(),
        std::fs::read(again.path().join("checkpoint.replay")).unwrap()
    );
}

#[test]
fn resuming_from_a_checkpoint_continues_the_same_trajectory() {
    let mut c = tiny(Variant::Aprl);
    c.experiment.checkpoint_every = 100;
    let full = tempdir().unwrap();
    let out = run_training(&c, 7, full.path()).unwrap();
    let mut t = Trainer::load(&full.path().join("checkpoint_100.aprl")).unwrap();
    let rest = tempdir().unwrap();
    let tail = t.run(50, rest.path()).unwrap();
    assert_eq!(tail.metrics.len(), 50);
    for (a, b) in out.metrics.rows[100..].iter().zip(&tail.metrics.rows) {
        assert_eq!(a.step, b.step + 100);
        assert_eq!(
            (a.reward, a.critic_loss, a.actor_loss, a.epsilon_mean, a.dyn_error),
            (b.reward, b.critic_loss, b.actor_loss, b.epsilon_mean, b.dyn_error)
        );
    }
}

#[test]
fn incompatible_checkpoint_is_rejected() {
    let dir = tempdir().unwrap();
    let mut c = tiny(Variant::Aprl);
    c.experiment.steps = 0;
    let out = run_training(&c, 8, dir.path()).unwrap();
    let mut bytes = std::fs::read(&out.checkpoint).unwrap();
    bytes[8] = 99;
    std::fs::write(&out.checkpoint, bytes).unwrap();
    assert!(matches!(
        Trainer::load(&out.checkpoint),
        Err(Error::Archive(crate::archive::ArchiveError::Version { .. }))
    ));
    let wrong_kind = dir.path().join("other.aprl");
    Archive::new("replay").write(&wrong_kind).unwrap();
    assert!(Trainer::load(&wrong_kind).is_err());
}

#[test]
fn restricted_actions_stay_within_the_initial_bound() {
    let dir = tempdir().unwrap();
    let c = tiny(Variant::Restricted);
    let mut t = Trainer::new(c.clone(), 9).unwrap();
    t.run(150, dir.path()).unwrap();
    let bound = c.regulator.start as f32;
    for tr in t.buffer().iter_ordered() {
        assert!(tr.action.iter().all(|a| a.abs() <= bound), "{:?}", tr.action);
    }
    assert!(t.buffer().iter_ordered().any(|tr| tr.action.iter().any(|a| a.abs() > 0.5 * bound)));
}

#[test]
fn hard_constraint_clips_executed_actions_to_the_schedule() {
    let dir = tempdir().unwrap();
    let mut c = tiny(Variant::HardConstraint);
    c.regulator.growth_steps = 100_000;
    let mut t = Trainer::new(c.clone(), 10).unwrap();
    let out = t.run(150, dir.path()).unwrap();
    // Each action was clipped to the region left in force by the previous step.
    let bounds = std::iter::once(c.regulator.start).chain(out.metrics.rows.iter().map(|r| r.epsilon_mean));
    for (tr, bound) in t.buffer().iter_ordered().zip(bounds) {
        assert!(tr.action.iter().all(|a| a.abs() <= bound as f32 + 1e-6));
    }
    assert!(out.metrics.rows.iter().all(|r| r.penalty.is_none_or(|p| p == 0.0)));
}

#[test]
fn reward_cost_changes_only_the_training_reward() {
    let dir = tempdir().unwrap();
    let c = tiny(Variant::RewardReg);
    let mut t = Trainer::new(c.clone(), 11).unwrap();
    let out = t.run(100, dir.path()).unwrap();
    for (row, tr) in out.metrics.rows.iter().zip(t.buffer().iter_ordered()) {
        let cost: f64 = tr.action.iter().map(|&a| (a as f64).powi(2)).sum();
        assert!((row.train_reward - (row.reward - 0.1 * cost)).abs() < 1e-12);
        assert_eq!(tr.reward, row.train_reward as f32);
        assert!(row.penalty.is_none_or(|p| p == 0.0));
    }
}

#[test]
fn non_adaptive_never_shrinks_even_on_huge_errors() {
    for (variant, expect) in [(Variant::NonAdaptive, false), (Variant::Aprl, true)] {
        let dir = tempdir().unwrap();
        let mut c = tiny(variant);
        c.regulator.shift_threshold = 0.0;
        let out = run_training(&c, 12, dir.path()).unwrap();
        assert_eq!(out.metrics.shrink_count() > 0, expect, "{variant}");
    }
}

#[test]
fn epsilon_grows_except_at_shrinks() {
    let dir = tempdir().unwrap();
    let mut c = tiny(Variant::Aprl);
    c.regulator.shift_threshold = 0.05;
    let out = run_training(&c, 13, dir.path()).unwrap();
    let rows = &out.metrics.rows;
    assert!(rows.windows(2).all(|w| w[1].shrink || w[1].epsilon_mean >= w[0].epsilon_mean));
    assert!(rows[0].epsilon_mean > c.regulator.start);
}

#[test]
fn echo_records_one_mechanism() {
    let dir = tempdir().unwrap();
    let mut c = tiny(Variant::Restricted);
    c.experiment.steps = 0;
    run_training(&c, 14, dir.path()).unwrap();
    let echo = RunEcho::read(dir.path()).unwrap();
    assert_eq!(echo.config, c);
    assert_eq!(echo.pathway.flags(), [false, true, false]);
}

#[test]
fn finetune_of_zero_steps_keeps_the_policy() {
    let dir = tempdir().unwrap();
    let out = run_training(&tiny(Variant::Aprl), 15, dir.path()).unwrap();
    let ft = tempdir().unwrap();
    let tuned = run_finetune(&out.checkpoint, Scenario::SoftGround, 0, ft.path()).unwrap();
    assert!(tuned.metrics.is_empty());
    let before = Trainer::load(&out.checkpoint).unwrap();
    let after = Trainer::load(&tuned.checkpoint).unwrap();
    assert_eq!(before.agent().params(), after.agent().params());
    assert_eq!(after.config().experiment.scenario, Scenario::SoftGround);
    let a = run_eval(&out.checkpoint, Scenario::SoftGround, 2, 0).unwrap();
    let b = run_eval(&tuned.checkpoint, Scenario::SoftGround, 2, 0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn finetune_opens_the_gate_immediately() {
    let dir = tempdir().unwrap();
    let out = run_training(&tiny(Variant::Aprl), 16, dir.path()).unwrap();
    let ft = tempdir().unwrap();
    let tuned = run_finetune(&out.checkpoint, Scenario::FrozenJoint(2), 5, ft.path()).unwrap();
    assert_eq!(tuned.metrics.len(), 5);
    assert!(tuned.metrics.rows.iter().all(|r| r.dyn_error_ema.is_some()));
}

#[test]
fn evaluation_is_deterministic_and_counts_episodes() {
    let dir = tempdir().unwrap();
    let mut c = tiny(Variant::NoReg);
    c.experiment.steps = 0;
    c.env.max_episode_steps = 40;
    let out = run_training(&c, 17, dir.path()).unwrap();
    let a = run_eval(&out.checkpoint, Scenario::Flat, 3, 5).unwrap();
    assert_eq!(a.episodes.len(), 3);
    assert_eq!(a, run_eval(&out.checkpoint, Scenario::Flat, 3, 5).unwrap());
    assert!(a.mean_time_to_distance() <= a.time_limit);
    assert!(run_eval(&out.checkpoint, Scenario::Flat, 0, 5).is_err());
    let parsed = EvalReport::episodes_from_csv(&a.to_csv()).unwrap();
    assert_eq!(parsed, a.episodes);
}

#[test]
fn compare_groups_runs_by_variant_and_scenario() {
    let root = tempdir().unwrap();
    for (v, seed) in [(Variant::Aprl, 0), (Variant::Aprl, 1), (Variant::Restricted, 0)] {
        let mut c = tiny(v);
        c.experiment.steps = 60;
        run_training(&c, seed, &root.path().join(run_dir_name(v, Scenario::Flat, seed))).unwrap();
    }
    let (runs, rows) = compare(root.path()).unwrap();
    assert_eq!(runs.len(), 3);
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].variant, rows[0].runs), (Variant::Aprl, 2));
    assert_eq!((rows[1].variant, rows[1].runs), (Variant::Restricted, 1));
    assert_eq!(write_summary(&rows).lines().count(), 3);
}

#[test]
fn run_many_preserves_job_order() {
    let out = run_many((0..7).collect(), 3, |i: u64| Ok(i * i));
    let values: Vec<u64> = out.into_iter().map(|r| r.unwrap()).collect();
    assert_eq!(values, vec![0, 1, 4, 9, 16, 25, 36]);
}
