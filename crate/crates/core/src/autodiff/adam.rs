use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::AutodiffError;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One bias-corrected Adam update. Parameters are untouched if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Tensor<T>],
        names: &[String],
    ) -> Result<(), AutodiffError> {
        assert_eq!(params.len(), grads.len());
        for ((p, g), name) in params.iter().zip(grads).zip(names) {
            if p.shape() != g.shape() {
                return Err(AutodiffError::shape("adam", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(AutodiffError::NonFiniteGradient { name: name.clone() });
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::<f32>::full(&[2, 2], 0.7)];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        state
            .step(&mut params, &[Tensor::zeros(&[2, 2])], &names(1))
            .unwrap();
        assert!(params[0].data().iter().all(|&v| v == 0.7));
        assert_eq!(state.step, 1);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut params = vec![Tensor::<f64>::scalar(0.0)];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..100 {
            state
                .step(&mut params, &[Tensor::scalar(2.0)], &names(1))
                .unwrap();
        }
        assert!(params[0].item() < 0.0);
        assert_eq!(state.step, 100);
    }

    #[test]
    fn single_step_on_parabola() {
        // f = x², x = 1, g = 2. m = 0.2, v = 0.004, m̂ = 2, v̂ = 4, step = lr·2/(2+eps) ≈ 0.1
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut params = vec![Tensor::<f64>::scalar(1.0)];
        let mut state = AdamState::new(cfg, &params);
        state
            .step(&mut params, &[Tensor::scalar(2.0)], &names(1))
            .unwrap();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((params[0].item() - expected).abs() < 1e-12);
        assert!(params[0].item() < 1.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut params = vec![Tensor::<f32>::scalar(0.0), Tensor::scalar(1.0)];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        let grads = vec![Tensor::scalar(0.0), Tensor::from_raw(vec![1, 1], vec![f32::NAN])];
        let err = state.step(&mut params, &grads, &names(2)).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFiniteGradient { ref name } if name == "p1"));
        assert_eq!(state.step, 0);
        assert_eq!(params[1].item(), 1.0);
    }
}
