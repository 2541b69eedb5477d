use rand::Rng;
use rand_distr::StandardNormal;

use super::{row, Mlp, MlpShape};
use crate::archive::{Archive, ArchiveError};
use crate::autodiff::{AutodiffError, Scalar, Tape, Tensor, Var};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Largest squashed magnitude, keeping sampled actions strictly inside the bounds.
const SQUASH_LIMIT: f64 = 1.0 - 1e-6;

/// Squashed-Gaussian policy: `a = scale ⊙ tanh(μ(s) + σ(s) ⊙ ξ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorNet<T = f32> {
    mlp: Mlp<T>,
    state_dim: usize,
    action_dim: usize,
    scale: Vec<T>,
}

/// Tape handles for a reparameterized batch of actions.
#[derive(Clone, Copy, Debug)]
pub struct PolicySample {
    /// `[B, A]` squashed actions.
    pub action: Var,
    /// `[B, 1]` log-densities of those actions.
    pub log_prob: Var,
}

impl<T: Scalar> ActorNet<T> {
    /// `scale` holds the per-dimension action bound; the actor emits values in `(−scale, scale)`.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        scale: Vec<T>,
        rng: &mut R,
    ) -> Self {
        assert_eq!(scale.len(), action_dim);
        Self {
            mlp: Mlp::new(MlpShape::plain(state_dim, hidden, 2 * action_dim), rng),
            state_dim,
            action_dim,
            scale,
        }
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<T> {
        &mut self.mlp
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn scale(&self) -> &[T] {
        &self.scale
    }

    pub fn cast<U: Scalar>(&self) -> ActorNet<U> {
        ActorNet {
            mlp: self.mlp.cast(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            scale: self.scale.iter().map(|v| U::from_f64_lossy(v.to_f64().unwrap())).collect(),
        }
    }

    /// Mean and clamped log-std heads for a `[B, S]` state batch.
    fn heads(&self, tape: &mut Tape<T>, vars: &[Var], states: Var) -> Result<(Var, Var), AutodiffError> {
        let out = self.mlp.forward_eval(tape, vars, states)?;
        let mean = tape.slice_cols(out, 0, self.action_dim)?;
        let raw_log_std = tape.slice_cols(out, self.action_dim, self.action_dim)?;
        let log_std = tape.clamp(
            raw_log_std,
            T::from_f64_lossy(LOG_STD_MIN),
            T::from_f64_lossy(LOG_STD_MAX),
        );
        Ok((mean, log_std))
    }

    /// Reparameterized sample with standard-normal `noise` of shape `[B, A]`.
    ///
    /// The log-density includes the tanh change of variables,
    /// `log(1 − tanh²u) = 2(log 2 − u − softplus(−2u))`, and the bound scaling.
    pub fn sample_on_tape(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        states: Var,
        noise: &Tensor<T>,
    ) -> Result<PolicySample, AutodiffError> {
        let (batch, a_dim) = noise.dims2()?;
        let (mean, log_std) = self.heads(tape, vars, states)?;
        if tape.value(mean).shape() != noise.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "actor noise",
                left: tape.value(mean).shape().to_vec(),
                right: noise.shape().to_vec(),
            });
        }
        let std = tape.exp(log_std);
        let xi = tape.constant(noise.clone());
        let spread = tape.mul(std, xi)?;
        let u = tape.add(mean, spread)?;
        let squashed = tape.tanh(u);
        let lim = T::from_f64_lossy(SQUASH_LIMIT);
        let squashed = tape.clamp(squashed, -lim, lim);
        let scale = tape.constant(row(&self.scale)?);
        let action = tape.mul_row(squashed, scale)?;

        // Constant part per row: Σ −½ξ² − A·½ln(2π) − Σ ln(scale)
        let half = T::from_f64_lossy(0.5);
        let log_scale: T = self.scale.iter().map(|s| s.ln()).sum();
        let c = T::from_usize(a_dim).unwrap() * half * T::from_f64_lossy((2.0 * std::f64::consts::PI).ln()) + log_scale;
        let consts: Vec<T> = noise
            .data()
            .chunks_exact(a_dim)
            .map(|r| -half * r.iter().map(|&v| v * v).sum::<T>() - c)
            .collect();
        let consts = tape.constant(Tensor::from_raw(vec![batch, 1], consts));

        let log_std_sum = tape.sum_cols(log_std)?;
        let minus_two_u = tape.scale(u, -(T::one() + T::one()));
        let sp = tape.softplus(minus_two_u);
        let u_plus_sp = tape.add(u, sp)?;
        // log(1 − tanh²u) = 2·ln2 − 2(u + softplus(−2u))
        let jac = tape.scale(u_plus_sp, -(T::one() + T::one()));
        let jac = tape.add_scalar(jac, T::from_f64_lossy(2.0 * std::f64::consts::LN_2));
        let jac_sum = tape.sum_cols(jac)?;
        let lp = tape.sub(consts, log_std_sum)?;
        let log_prob = tape.sub(lp, jac_sum)?;
        Ok(PolicySample { action, log_prob })
    }

    fn check_state(&self, state: &[T]) -> Result<Tensor<T>, AutodiffError> {
        if state.len() != self.state_dim {
            return Err(AutodiffError::ShapeMismatch {
                op: "actor state",
                left: vec![state.len()],
                right: vec![self.state_dim],
            });
        }
        row(state)
    }

    /// Draws one action and its log-density.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[T], rng: &mut R) -> Result<(Vec<T>, T), AutodiffError> {
        let s = self.check_state(state)?;
        let noise = Tensor::from_fn(&[1, self.action_dim], |_| {
            T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal))
        });
        let mut tape = Tape::inference();
        let vars = self.mlp.bind(&mut tape, false);
        let sv = tape.constant(s);
        let out = self.sample_on_tape(&mut tape, &vars, sv, &noise)?;
        Ok((
            tape.value(out.action).data().to_vec(),
            tape.value(out.log_prob).item(),
        ))
    }

    /// Deterministic action: the squashed mean.
    pub fn mode(&self, state: &[T]) -> Result<Vec<T>, AutodiffError> {
        let (mean, _) = self.mean_log_std(state)?;
        let lim = T::from_f64_lossy(SQUASH_LIMIT);
        Ok(mean
            .iter()
            .zip(&self.scale)
            .map(|(&m, &s)| m.tanh().max(-lim).min(lim) * s)
            .collect())
    }

    /// Gaussian mean and clamped log-std for one state.
    pub fn mean_log_std(&self, state: &[T]) -> Result<(Vec<T>, Vec<T>), AutodiffError> {
        let s = self.check_state(state)?;
        let mut tape = Tape::inference();
        let vars = self.mlp.bind(&mut tape, false);
        let sv = tape.constant(s);
        let (mean, log_std) = self.heads(&mut tape, &vars, sv)?;
        Ok((tape.value(mean).data().to_vec(), tape.value(log_std).data().to_vec()))
    }

    /// Log-density of `action` (strictly inside the bounds) under the policy at `state`.
    pub fn log_prob(&self, state: &[T], action: &[T]) -> Result<T, AutodiffError> {
        let (mean, log_std) = self.mean_log_std(state)?;
        let half = T::from_f64_lossy(0.5);
        let ln_2pi = T::from_f64_lossy((2.0 * std::f64::consts::PI).ln());
        let mut total = T::zero();
        for d in 0..self.action_dim {
            let t = action[d] / self.scale[d];
            let u = t.atanh();
            let z = (u - mean[d]) / log_std[d].exp();
            total = total - half * z * z - log_std[d] - half * ln_2pi
                - self.scale[d].ln()
                - (T::one() - t * t).ln();
        }
        Ok(total)
    }
}

impl ActorNet<f32> {
    pub(crate) fn save(&self, archive: &mut Archive, prefix: &str) {
        self.mlp.save(archive, prefix);
        archive.push_f32s(format!("{prefix}.scale"), &self.scale);
    }

    pub(crate) fn load(&mut self, archive: &Archive, prefix: &str) -> Result<(), ArchiveError> {
        self.mlp.load(archive, prefix)?;
        let scale = archive.f32s(&format!("{prefix}.scale"))?;
        if scale.len() != self.action_dim {
            return Err(ArchiveError::Type(format!("{prefix}.scale")));
        }
        self.scale = scale;
        Ok(())
    }
}
