//! Central finite differences against the tape, in f64.

use aprl_core::autodiff::{Tape, Tensor, Var};
use aprl_core::nets::{ActorNet, CriticNet, DynamicsNet, Mlp};
use aprl_core::regulator::FeasibleRegion;
use aprl_core::replay::Batch;
use aprl_core::sac::{actor_loss, critic_loss, dynamics_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Below this magnitude both derivatives count as zero.
pub const ZERO: f64 = 1e-8;
/// Parameter entries probed per case.
pub const PROBES: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Network {
    Actor,
    Critic,
    Dynamics,
}

#[derive(Debug)]
pub struct CaseResult {
    pub network: Network,
    pub max_rel_error: f64,
    pub probes: usize,
    /// Probes whose derivative exceeded the zero threshold.
    pub nonzero: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ZERO {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(&[rows, cols], |_| rng.random_range(lo..hi))
}

fn normal_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(&[rows, cols], |_| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// Replaces every parameter with small random values so no layer is trivially zero.
fn scramble(mlp: &mut Mlp<f64>, rng: &mut ChaCha8Rng) {
    for p in mlp.params_mut() {
        *p = Tensor::from_fn(p.shape(), |_| rng.random_range(-0.6..0.6));
    }
}

fn with_entry(mlp: &Mlp<f64>, param: usize, index: usize, delta: f64) -> Mlp<f64> {
    let mut out = mlp.clone();
    let p = &mut out.params_mut()[param];
    let mut data = p.data().to_vec();
    data[index] += delta;
    *p = Tensor::new(p.shape().to_vec(), data).unwrap();
    out
}

fn probe_entries(mlp: &Mlp<f64>, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    (0..PROBES)
        .map(|_| {
            let p = rng.random_range(0..mlp.params().len());
            (p, rng.random_range(0..mlp.params()[p].len()))
        })
        .collect()
}

/// Compares tape gradients of `loss` with central differences on random entries.
fn check_mlp(
    mlp: &Mlp<f64>,
    rng: &mut ChaCha8Rng,
    loss: &dyn Fn(&Mlp<f64>, bool) -> (f64, Vec<Tensor<f64>>),
) -> (f64, usize, usize) {
    let (_, grads) = loss(mlp, true);
    let mut worst: f64 = 0.0;
    let mut nonzero = 0;
    let entries = probe_entries(mlp, rng);
    for &(p, i) in &entries {
        let (up, _) = loss(&with_entry(mlp, p, i, STEP), false);
        let (down, _) = loss(&with_entry(mlp, p, i, -STEP), false);
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(rel_error(grads[p].data()[i], numeric));
        nonzero += usize::from(numeric.abs() >= ZERO);
    }
    (worst, entries.len(), nonzero)
}

fn grads_of(tape: &Tape<f64>, loss: Var, vars: &[Var], mlp: &Mlp<f64>) -> Vec<Tensor<f64>> {
    let mut g = tape.backward(loss).unwrap();
    vars.iter()
        .zip(mlp.params())
        .map(|(&v, p)| g.take_or_zeros(v, p.shape()))
        .collect()
}

/// One random case for `network`, built in f32 and checked on its f64 shadow.
pub fn run_case(network: Network, seed: u64) -> CaseResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s_dim = rng.random_range(2..7);
    let a_dim = rng.random_range(1..4);
    let hidden = rng.random_range(3..10);
    let batch = rng.random_range(2..6);
    let states = random_tensor(&mut rng, batch, s_dim, -2.0, 2.0);
    let actions = random_tensor(&mut rng, batch, a_dim, -1.0, 1.0);
    let (max_rel_error, probes, nonzero) = match network {
        Network::Actor => {
            let scale: Vec<f32> = (0..a_dim).map(|_| rng.random_range(0.2..1.0)).collect();
            let mut actor = ActorNet::<f32>::new(s_dim, a_dim, hidden, scale, &mut rng).cast::<f64>();
            scramble(actor.mlp_mut(), &mut rng);
            let critic = CriticNet::<f32>::new(s_dim, a_dim, hidden, 0.1, 2, &mut rng).cast::<f64>();
            let noise = normal_tensor(&mut rng, batch, a_dim);
            let region = FeasibleRegion::new((0..a_dim).map(|_| rng.random_range(0.05..0.9)).collect()).unwrap();
            let alpha = rng.random_range(0.01..1.0);
            let dropout_seed = rng.random::<u64>();
            let loss = |mlp: &Mlp<f64>, trace: bool| {
                let mut a = actor.clone();
                *a.mlp_mut() = mlp.clone();
                let mut tape = Tape::new();
                let vars = a.mlp().bind(&mut tape, true);
                let mut drop_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                let l = actor_loss(&mut tape, &a, &vars, &critic, &states, &noise, alpha, Some((&region, 10.0)), Some(&mut drop_rng)).unwrap();
                let value = tape.value(l.loss).item();
                let grads = if trace { grads_of(&tape, l.loss, &vars, a.mlp()) } else { Vec::new() };
                (value, grads)
            };
            check_mlp(actor.mlp(), &mut rng, &loss)
        }
        Network::Critic => {
            let mut critic = CriticNet::<f32>::new(s_dim, a_dim, hidden, 0.1, 2, &mut rng).cast::<f64>();
            for m in critic.members_mut() {
                scramble(m, &mut rng);
            }
            let member = rng.random_range(0..2);
            let targets = random_tensor(&mut rng, batch, 1, -3.0, 3.0);
            let batch_data = Batch {
                states: states.clone(),
                actions: actions.clone(),
                rewards: Tensor::zeros(&[batch, 1]),
                next_states: states.clone(),
                terminals: Tensor::zeros(&[batch, 1]),
            };
            let dropout_seed = rng.random::<u64>();
            let loss = |mlp: &Mlp<f64>, trace: bool| {
                let mut c = critic.clone();
                c.members_mut()[member] = mlp.clone();
                let mut tape = Tape::new();
                let vars = c.bind(&mut tape, true);
                let mut drop_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                let l = critic_loss(&mut tape, &c, &vars, &batch_data, &targets, Some(&mut drop_rng)).unwrap();
                let value = tape.value(l).item();
                let grads = if trace { grads_of(&tape, l, &vars[member], &c.members()[member]) } else { Vec::new() };
                (value, grads)
            };
            check_mlp(&critic.members()[member], &mut rng, &loss)
        }
        Network::Dynamics => {
            let mut dynamics = DynamicsNet::<f32>::new(s_dim, a_dim, hidden, 1e-3, &mut rng).cast::<f64>();
            for _ in 0..20 {
                let s: Vec<f64> = (0..s_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                dynamics.observe(&s);
            }
            scramble(dynamics.mlp_mut(), &mut rng);
            let batch_data = Batch {
                states: states.clone(),
                actions: actions.clone(),
                rewards: Tensor::zeros(&[batch, 1]),
                next_states: random_tensor(&mut rng, batch, s_dim, -2.0, 2.0),
                terminals: Tensor::zeros(&[batch, 1]),
            };
            let loss = |mlp: &Mlp<f64>, trace: bool| {
                let mut d = dynamics.clone();
                *d.mlp_mut() = mlp.clone();
                let mut tape = Tape::new();
                let vars = d.mlp().bind(&mut tape, true);
                let l = dynamics_loss(&mut tape, &d, &vars, &batch_data).unwrap();
                let value = tape.value(l).item();
                let grads = if trace { grads_of(&tape, l, &vars, d.mlp()) } else { Vec::new() };
                (value, grads)
            };
            check_mlp(dynamics.mlp(), &mut rng, &loss)
        }
    };
    CaseResult {
        network,
        max_rel_error,
        probes,
        nonzero,
    }
}

/// Cases cycle through the three networks.
pub fn run_suite(cases: usize, base_seed: u64) -> Vec<CaseResult> {
    let nets = [Network::Actor, Network::Critic, Network::Dynamics];
    (0..cases)
        .map(|k| run_case(nets[k % 3], base_seed + k as u64))
        .collect()
}
