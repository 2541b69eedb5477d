//! Fixtures shared by the criterion benchmarks in `benches/`.

use aprl_core::env::{Env, ACTION_DIM, OBS_DIM};
use aprl_core::{EnvConfig, ExperimentConfig, ReplayBuffer, RunRng, Transition};
use rand::{Rng, SeedableRng};

/// Buffer of `n` transitions collected with uniformly random actions.
pub fn filled_buffer(n: usize, seed: u64) -> ReplayBuffer {
    let mut env = Env::new(EnvConfig::default(), RunRng::seed_from_u64(seed)).expect("default env");
    let mut rng = RunRng::seed_from_u64(seed + 1);
    let mut buffer = ReplayBuffer::new(OBS_DIM, ACTION_DIM, n).expect("capacity");
    let mut obs = env.observation();
    while buffer.len() < n {
        let action: Vec<f32> = (0..ACTION_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = env.step(&action).expect("step");
        buffer
            .insert(Transition {
                state: obs.to_vec(),
                action,
                reward: r.reward as f32,
                next_state: r.observation.to_vec(),
                terminal: r.terminated,
                fall: r.terminated,
            })
            .expect("insert");
        obs = if r.done() { env.reset() } else { r.observation };
    }
    buffer
}

/// Full-size learner settings with a short warmup.
pub fn bench_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.sac.warmup_steps = 256;
    config.replay.capacity = 10_000;
    config
}
