use rand::Rng;

use super::{Mlp, MlpShape};
use crate::archive::{Archive, ArchiveError};
use crate::autodiff::{AutodiffError, Scalar, Tape, Tensor, Var};

/// Welford running mean/variance per state dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn update<T: Scalar>(&mut self, x: &[T]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let v = v.to_f64().unwrap();
            let delta = v - *m;
            *m += delta / n;
            *m2 += delta * (v - *m);
        }
    }

    /// Population standard deviation, never below `floor`; 1 before any data.
    pub fn std(&self, floor: f64) -> Vec<f64> {
        if self.count == 0 {
            return vec![1.0; self.mean.len()];
        }
        self.m2
            .iter()
            .map(|m2| (m2 / self.count as f64).sqrt().max(floor))
            .collect()
    }

    pub(crate) fn save(&self, archive: &mut Archive, prefix: &str) {
        archive.push_u64(format!("{prefix}.count"), self.count);
        archive.push_f64s(format!("{prefix}.mean"), &self.mean);
        archive.push_f64s(format!("{prefix}.m2"), &self.m2);
    }

    pub(crate) fn load(archive: &Archive, prefix: &str) -> Result<Self, ArchiveError> {
        Ok(Self {
            count: archive.u64(&format!("{prefix}.count"))?,
            mean: archive.f64s(&format!("{prefix}.mean"))?,
            m2: archive.f64s(&format!("{prefix}.m2"))?,
        })
    }
}

/// Deterministic-mean dynamics model with unit-covariance Gaussian likelihood.
///
/// Inputs are the normalized state and the (already normalized) action. The
/// head predicts the state change in units of the running state std, so the
/// prediction is `s + std ⊙ head(s, a)` and an untrained model predicts no change.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsNet<T = f32> {
    mlp: Mlp<T>,
    state_dim: usize,
    action_dim: usize,
    stats: RunningStats,
    std_floor: f64,
}

impl<T: Scalar> DynamicsNet<T> {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        std_floor: f64,
        rng: &mut R,
    ) -> Self {
        let shape = MlpShape {
            zero_output: true,
            ..MlpShape::plain(state_dim + action_dim, hidden, state_dim)
        };
        Self {
            mlp: Mlp::new(shape, rng),
            state_dim,
            action_dim,
            stats: RunningStats::new(state_dim),
            std_floor,
        }
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<T> {
        &mut self.mlp
    }

    pub fn stats(&self) -> &RunningStats {
        &self.stats
    }

    pub fn set_stats(&mut self, stats: RunningStats) {
        assert_eq!(stats.mean.len(), self.state_dim);
        self.stats = stats;
    }

    /// Folds a replay-buffer state into the normalization statistics.
    pub fn observe(&mut self, state: &[T]) {
        self.stats.update(state);
    }

    pub fn state_std(&self) -> Vec<f64> {
        self.stats.std(self.std_floor)
    }

    pub fn cast<U: Scalar>(&self) -> DynamicsNet<U> {
        DynamicsNet {
            mlp: self.mlp.cast(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            stats: self.stats.clone(),
            std_floor: self.std_floor,
        }
    }

    /// `[B, S+A]` network input: standardized states alongside raw actions.
    pub fn normalized_input(&self, states: &Tensor<T>, actions: &Tensor<T>) -> Result<Tensor<T>, AutodiffError> {
        let (b, s_dim) = states.dims2()?;
        let (b2, a_dim) = actions.dims2()?;
        if b != b2 || s_dim != self.state_dim || a_dim != self.action_dim {
            return Err(AutodiffError::shape("dynamics input", states.shape(), actions.shape()));
        }
        let mean: Vec<T> = self.stats.mean.iter().map(|&m| T::from_f64_lossy(m)).collect();
        let inv: Vec<T> = self.state_std().iter().map(|&s| T::from_f64_lossy(1.0 / s)).collect();
        let mut out = Vec::with_capacity(b * (s_dim + a_dim));
        for (s, a) in states.data().chunks_exact(s_dim).zip(actions.data().chunks_exact(a_dim)) {
            out.extend(s.iter().zip(&mean).zip(&inv).map(|((&v, &m), &i)| (v - m) * i));
            out.extend_from_slice(a);
        }
        Ok(Tensor::from_raw(vec![b, s_dim + a_dim], out))
    }

    /// Regression target `(s′ − s) / std` for the head.
    pub fn normalized_delta(&self, states: &Tensor<T>, next_states: &Tensor<T>) -> Result<Tensor<T>, AutodiffError> {
        if states.shape() != next_states.shape() {
            return Err(AutodiffError::shape("dynamics target", states.shape(), next_states.shape()));
        }
        let inv: Vec<T> = self.state_std().iter().map(|&s| T::from_f64_lossy(1.0 / s)).collect();
        let n = self.state_dim;
        Ok(Tensor::from_fn(states.shape(), |i| {
            (next_states.data()[i] - states.data()[i]) * inv[i % n]
        }))
    }

    /// Mean squared error of the head against the normalized state change.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        states: &Tensor<T>,
        actions: &Tensor<T>,
        next_states: &Tensor<T>,
    ) -> Result<Var, AutodiffError> {
        let x = tape.constant(self.normalized_input(states, actions)?);
        let target = tape.constant(self.normalized_delta(states, next_states)?);
        let head = self.mlp.forward_eval(tape, vars, x)?;
        let residual = tape.sub(head, target)?;
        let sq = tape.square(residual);
        Ok(tape.mean(sq))
    }

    /// Predicted next states for a batch, in state units.
    pub fn predict_batch(&self, states: &Tensor<T>, actions: &Tensor<T>) -> Result<Tensor<T>, AutodiffError> {
        let head = self.mlp.predict(&self.normalized_input(states, actions)?)?;
        let std: Vec<T> = self.state_std().iter().map(|&s| T::from_f64_lossy(s)).collect();
        let n = self.state_dim;
        Ok(Tensor::from_fn(states.shape(), |i| {
            states.data()[i] + head.data()[i] * std[i % n]
        }))
    }

    /// Predicted next state for one transition.
    pub fn predict(&self, state: &[T], action: &[T]) -> Result<Vec<T>, AutodiffError> {
        let s = Tensor::new(vec![1, state.len()], state.to_vec())?;
        let a = Tensor::new(vec![1, action.len()], action.to_vec())?;
        Ok(self.predict_batch(&s, &a)?.into_data())
    }
}

impl DynamicsNet<f32> {
    pub(crate) fn save(&self, archive: &mut Archive, prefix: &str) {
        self.mlp.save(archive, prefix);
        self.stats.save(archive, &format!("{prefix}.stats"));
    }

    pub(crate) fn load(&mut self, archive: &Archive, prefix: &str) -> Result<(), ArchiveError> {
        self.mlp.load(archive, prefix)?;
        let stats = RunningStats::load(archive, &format!("{prefix}.stats"))?;
        if stats.mean.len() != self.state_dim {
            return Err(ArchiveError::Type(format!("{prefix}.stats")));
        }
        self.stats = stats;
        Ok(())
    }
}
