//! Function approximators: squashed-Gaussian actor, critic ensemble and
//! dynamics model, all built from the same two-hidden-layer [`Mlp`].

mod actor;
mod critic;
mod dynamics;

pub use actor::{ActorNet, PolicySample, LOG_STD_MAX, LOG_STD_MIN};
pub use critic::CriticNet;
pub use dynamics::{DynamicsNet, RunningStats};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArchiveError};
use crate::autodiff::{AutodiffError, Scalar, Tape, Tensor, Var};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer sizes and regularizers of a two-hidden-layer network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    /// LayerNorm (with affine gain/bias) after each hidden linear layer.
    pub layer_norm: bool,
    /// Dropout rate after each hidden linear layer (training mode only).
    pub dropout: f64,
    /// Zero-initialize the output layer.
    pub zero_output: bool,
}

impl MlpShape {
    pub fn plain(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            layer_norm: false,
            dropout: 0.0,
            zero_output: false,
        }
    }
}

/// Feed-forward network `Linear → [Dropout → LayerNorm] → ReLU`, twice, then `Linear`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T = f32> {
    shape: MlpShape,
    params: Vec<Tensor<T>>,
    names: Vec<String>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(shape: MlpShape, rng: &mut R) -> Self {
        let mut params = Vec::new();
        let mut names = Vec::new();
        let mut fan_in = shape.input;
        for layer in 0..2 {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.push(uniform(&[fan_in, shape.hidden], bound, rng));
            names.push(format!("h{layer}.w"));
            params.push(uniform(&[1, shape.hidden], bound, rng));
            names.push(format!("h{layer}.b"));
            if shape.layer_norm {
                params.push(Tensor::full(&[1, shape.hidden], T::one()));
                names.push(format!("h{layer}.ln_gain"));
                params.push(Tensor::zeros(&[1, shape.hidden]));
                names.push(format!("h{layer}.ln_bias"));
            }
            fan_in = shape.hidden;
        }
        if shape.zero_output {
            params.push(Tensor::zeros(&[fan_in, shape.output]));
            params.push(Tensor::zeros(&[1, shape.output]));
        } else {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.push(uniform(&[fan_in, shape.output], bound, rng));
            params.push(uniform(&[1, shape.output], bound, rng));
        }
        names.push("out.w".into());
        names.push("out.b".into());
        Self {
            shape,
            params,
            names,
        }
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Places the parameters on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    /// Forward pass; dropout is applied only when a generator is supplied.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        mut dropout: Option<&mut R>,
    ) -> Result<Var, AutodiffError> {
        let mut it = vars.iter().copied();
        let mut h = x;
        for _ in 0..2 {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            if let Some(rng) = dropout.as_deref_mut() {
                h = tape.dropout(h, self.shape.dropout, rng)?;
            }
            if self.shape.layer_norm {
                let (g, beta) = (it.next().unwrap(), it.next().unwrap());
                h = tape.layer_norm(h, T::from_f64_lossy(LAYER_NORM_EPS))?;
                h = tape.mul_row(h, g)?;
                h = tape.add_bias(h, beta)?;
            }
            h = tape.relu(h);
        }
        let (w, b) = (it.next().unwrap(), it.next().unwrap());
        let out = tape.matmul(h, w)?;
        tape.add_bias(out, b)
    }

    pub fn forward_eval(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var, AutodiffError> {
        self.forward::<crate::rng::RunRng>(tape, vars, x, None)
    }

    /// Evaluates the network on a batch without recording gradients.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>, AutodiffError> {
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = self.forward_eval(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            shape: self.shape,
            params: self.params.iter().map(Tensor::cast).collect(),
            names: self.names.clone(),
        }
    }

    /// `self ← τ·online + (1−τ)·self`, elementwise.
    pub fn polyak_from(&mut self, online: &Mlp<T>, tau: T) {
        let keep = T::one() - tau;
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
                *tv = tau * ov + keep * *tv;
            }
        }
    }
}

impl Mlp<f32> {
    pub(crate) fn save(&self, archive: &mut Archive, prefix: &str) {
        for (name, p) in self.names.iter().zip(&self.params) {
            archive.push_tensor(format!("{prefix}.{name}"), p);
        }
    }

    pub(crate) fn load(&mut self, archive: &Archive, prefix: &str) -> Result<(), ArchiveError> {
        for (name, p) in self.names.iter().zip(self.params.iter_mut()) {
            let key = format!("{prefix}.{name}");
            let t = archive.tensor(&key)?;
            if t.shape() != p.shape() {
                return Err(ArchiveError::Type(key));
            }
            *p = t;
        }
        Ok(())
    }
}

fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-bound..bound)))
}

/// Copies a slice into a `[1, n]` tensor, rejecting non-finite entries.
pub(crate) fn row<T: Scalar>(values: &[T]) -> Result<Tensor<T>, AutodiffError> {
    Tensor::new(vec![1, values.len()], values.to_vec())
}
