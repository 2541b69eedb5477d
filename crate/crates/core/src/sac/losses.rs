//! Learner objectives, generic over precision so they can be checked in f64.

use rand::Rng;

use crate::autodiff::{AutodiffError, Scalar, Tape, Tensor, Var};
use crate::nets::{ActorNet, CriticNet, DynamicsNet};
use crate::regulator::{penalty_on_tape, FeasibleRegion};
use crate::replay::Batch;

/// Bootstrap targets `r + γ(1 − d)(min_k Q̄_k(s′, a′) − α·log π(a′|s′))`, `[B, 1]`.
///
/// `noise` drives the next-action sample; with `entropy` off the log-density term is dropped.
pub fn td_targets<T: Scalar>(
    actor: &ActorNet<T>,
    critic: &CriticNet<T>,
    batch: &Batch<T>,
    noise: &Tensor<T>,
    alpha: T,
    gamma: T,
    entropy: bool,
) -> Result<Tensor<T>, AutodiffError> {
    let mut tape = Tape::inference();
    let vars = actor.mlp().bind(&mut tape, false);
    let s2 = tape.constant(batch.next_states.clone());
    let next = actor.sample_on_tape(&mut tape, &vars, s2, noise)?;
    let next_actions = tape.value(next.action).clone();
    let log_prob = tape.value(next.log_prob).clone();
    let q = critic.target_min(&batch.next_states, &next_actions)?;
    let ent = if entropy { alpha } else { T::zero() };
    let out: Vec<T> = (0..batch.len())
        .map(|i| {
            let soft_v = q.data()[i] - ent * log_prob.data()[i];
            batch.rewards.data()[i] + gamma * (T::one() - batch.terminals.data()[i]) * soft_v
        })
        .collect();
    Ok(Tensor::from_raw(vec![batch.len(), 1], out))
}

/// `Σ_k mean((Q_k(s, a) − y)²)` over the online ensemble.
pub fn critic_loss<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    critic: &CriticNet<T>,
    vars: &[Vec<Var>],
    batch: &Batch<T>,
    targets: &Tensor<T>,
    dropout: Option<&mut R>,
) -> Result<Var, AutodiffError> {
    let s = tape.constant(batch.states.clone());
    let a = tape.constant(batch.actions.clone());
    let y = tape.constant(targets.clone());
    let qs = critic.q_on_tape(tape, vars, s, a, dropout)?;
    let mut total: Option<Var> = None;
    for q in qs {
        let diff = tape.sub(q, y)?;
        let sq = tape.square(diff);
        let m = tape.mean(sq);
        total = Some(match total {
            Some(t) => tape.add(t, m)?,
            None => m,
        });
    }
    Ok(total.expect("critic ensemble is non-empty"))
}

/// Handles produced by [`actor_loss`].
#[derive(Clone, Copy, Debug)]
pub struct ActorLoss {
    pub loss: Var,
    /// `[B, 1]` log-densities of the sampled actions.
    pub log_prob: Var,
    /// Scalar mean penalty, when a region was supplied.
    pub penalty: Option<Var>,
    /// Scalar mean pessimistic value of the sampled actions.
    pub q_mean: Var,
}

/// `mean(α·log π(a|s) − min_k Q_k(s, a) + σ·Σ_d max(0, |a_d| − ε_d))` with reparameterized `a`.
///
/// Critic parameters enter as constants so only the actor receives gradients.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    actor: &ActorNet<T>,
    actor_vars: &[Var],
    critic: &CriticNet<T>,
    states: &Tensor<T>,
    noise: &Tensor<T>,
    alpha: T,
    penalty: Option<(&FeasibleRegion, T)>,
    dropout: Option<&mut R>,
) -> Result<ActorLoss, AutodiffError> {
    let s = tape.constant(states.clone());
    let sample = actor.sample_on_tape(tape, actor_vars, s, noise)?;
    let critic_vars = critic.bind(tape, false);
    let qs = critic.q_on_tape(tape, &critic_vars, s, sample.action, dropout)?;
    let q = CriticNet::min_on_tape(tape, &qs)?;
    let ent = tape.scale(sample.log_prob, alpha);
    let mut per_row = tape.sub(ent, q)?;
    let mut penalty_mean = None;
    if let Some((region, sigma)) = penalty {
        let p = penalty_on_tape(tape, sample.action, region, sigma)?;
        per_row = tape.add(per_row, p)?;
        penalty_mean = Some(tape.mean(p));
    }
    let q_mean = tape.mean(q);
    Ok(ActorLoss {
        loss: tape.mean(per_row),
        log_prob: sample.log_prob,
        penalty: penalty_mean,
        q_mean,
    })
}

/// Mean squared error in normalized state units.
pub fn dynamics_loss<T: Scalar>(
    tape: &mut Tape<T>,
    dynamics: &DynamicsNet<T>,
    vars: &[Var],
    batch: &Batch<T>,
) -> Result<Var, AutodiffError> {
    dynamics.loss_on_tape(tape, vars, &batch.states, &batch.actions, &batch.next_states)
}
