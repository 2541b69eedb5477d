use rand::Rng;

use super::{row, Mlp, MlpShape};
use crate::archive::{Archive, ArchiveError};
use crate::autodiff::{AutodiffError, Scalar, Tape, Tensor, Var};

/// Ensemble of Q-networks with Polyak-averaged targets.
///
/// Each member is `Linear → Dropout → LayerNorm → ReLU` twice, then a scalar head.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet<T = f32> {
    members: Vec<Mlp<T>>,
    targets: Vec<Mlp<T>>,
}

impl<T: Scalar> CriticNet<T> {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        dropout: f64,
        ensemble: usize,
        rng: &mut R,
    ) -> Self {
        let shape = MlpShape {
            layer_norm: true,
            dropout,
            ..MlpShape::plain(state_dim + action_dim, hidden, 1)
        };
        let members: Vec<_> = (0..ensemble).map(|_| Mlp::new(shape, rng)).collect();
        Self {
            targets: members.clone(),
            members,
        }
    }

    pub fn members(&self) -> &[Mlp<T>] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Mlp<T>] {
        &mut self.members
    }

    pub fn targets(&self) -> &[Mlp<T>] {
        &self.targets
    }

    pub fn ensemble_size(&self) -> usize {
        self.members.len()
    }

    pub fn cast<U: Scalar>(&self) -> CriticNet<U> {
        CriticNet {
            members: self.members.iter().map(Mlp::cast).collect(),
            targets: self.targets.iter().map(Mlp::cast).collect(),
        }
    }

    /// Places every online member on the tape.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Vec<Var>> {
        self.members.iter().map(|m| m.bind(tape, trainable)).collect()
    }

    /// Per-member `[B, 1]` values for already-placed `[B, S]` states and `[B, A]` actions.
    pub fn q_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Vec<Var>],
        states: Var,
        actions: Var,
        mut dropout: Option<&mut R>,
    ) -> Result<Vec<Var>, AutodiffError> {
        let input = tape.concat(states, actions)?;
        self.members
            .iter()
            .zip(vars)
            .map(|(m, v)| m.forward(tape, v, input, dropout.as_deref_mut()))
            .collect()
    }

    /// Elementwise minimum across the ensemble.
    pub fn min_on_tape(tape: &mut Tape<T>, qs: &[Var]) -> Result<Var, AutodiffError> {
        let mut q = qs[0];
        for &other in &qs[1..] {
            q = tape.min(q, other)?;
        }
        Ok(q)
    }

    /// Target-network ensemble minimum for a batch, off-tape.
    pub fn target_min(&self, states: &Tensor<T>, actions: &Tensor<T>) -> Result<Tensor<T>, AutodiffError> {
        let mut tape = Tape::inference();
        let s = tape.constant(states.clone());
        let a = tape.constant(actions.clone());
        let input = tape.concat(s, a)?;
        let mut qs = Vec::with_capacity(self.targets.len());
        for t in &self.targets {
            let vars = t.bind(&mut tape, false);
            qs.push(t.forward_eval(&mut tape, &vars, input)?);
        }
        let q = Self::min_on_tape(&mut tape, &qs)?;
        Ok(tape.value(q).clone())
    }

    /// Ensemble values for a single state–action pair.
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        state: &[T],
        action: &[T],
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<T>, AutodiffError> {
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape, false);
        let s = tape.constant(row(state)?);
        let a = tape.constant(row(action)?);
        let qs = if training {
            self.q_on_tape(&mut tape, &vars, s, a, Some(rng))?
        } else {
            self.q_on_tape::<R>(&mut tape, &vars, s, a, None)?
        };
        Ok(qs.iter().map(|&q| tape.value(q).item()).collect())
    }

    /// `target ← τ·online + (1−τ)·target` for every member.
    pub fn polyak(&mut self, tau: T) {
        for (t, m) in self.targets.iter_mut().zip(&self.members) {
            t.polyak_from(m, tau);
        }
    }
}

impl CriticNet<f32> {
    pub(crate) fn save(&self, archive: &mut Archive, prefix: &str) {
        for (k, (m, t)) in self.members.iter().zip(&self.targets).enumerate() {
            m.save(archive, &format!("{prefix}.q{k}"));
            t.save(archive, &format!("{prefix}.target{k}"));
        }
    }

    pub(crate) fn load(&mut self, archive: &Archive, prefix: &str) -> Result<(), ArchiveError> {
        for (k, (m, t)) in self.members.iter_mut().zip(self.targets.iter_mut()).enumerate() {
            m.load(archive, &format!("{prefix}.q{k}"))?;
            t.load(archive, &format!("{prefix}.target{k}"))?;
        }
        Ok(())
    }
}
