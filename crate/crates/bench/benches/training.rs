use std::hint::black_box;

use aprl_bench::{bench_config, filled_buffer};
use aprl_core::env::{Env, ACTION_DIM, OBS_DIM};
use aprl_core::harness::Trainer;
use aprl_core::{Agent, EnvConfig, RunRng};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;

fn env_step(c: &mut Criterion) {
    let mut env = Env::new(EnvConfig::default(), RunRng::seed_from_u64(0)).unwrap();
    let action = [0.2f32, -0.1, -0.2, 0.1];
    c.bench_function("env_step", |b| {
        b.iter(|| {
            let r = env.step(black_box(&action)).unwrap();
            if r.done() {
                env.reset();
            }
            r.reward
        })
    });
}

fn learner_updates(c: &mut Criterion) {
    let config = bench_config().sac;
    let buffer = filled_buffer(2_000, 1);
    let mut agent = Agent::new(config.clone(), OBS_DIM, ACTION_DIM, vec![1.0; ACTION_DIM], 2).unwrap();
    let mut rng = RunRng::seed_from_u64(3);
    c.bench_function("critic_update", |b| {
        b.iter_batched(
            || buffer.sample(config.batch_size, &mut rng).unwrap(),
            |batch| agent.critic_update(&batch).unwrap().loss,
            BatchSize::SmallInput,
        )
    });
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for rr in [1, 20] {
        let mut cfg = config.clone();
        cfg.replay_ratio = rr;
        let mut agent = Agent::new(cfg, OBS_DIM, ACTION_DIM, vec![1.0; ACTION_DIM], 4).unwrap();
        group.bench_function(format!("rr{rr}"), |b| b.iter(|| agent.train_step(&buffer, None).unwrap()));
    }
    group.finish();
}

fn trainer_step(c: &mut Criterion) {
    let mut config = bench_config();
    config.sac.replay_ratio = 2;
    let mut trainer = Trainer::new(config, 5).unwrap();
    for _ in 0..300 {
        trainer.step().unwrap();
    }
    let mut group = c.benchmark_group("trainer");
    group.sample_size(10);
    group.bench_function("env_step_rr2", |b| b.iter(|| trainer.step().unwrap()));
    group.finish();
}

criterion_group!(benches, env_step, learner_updates, trainer_step);
criterion_main!(benches);
