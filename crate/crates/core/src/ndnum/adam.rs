use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::array::{Array, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-5,
        }
    }
}

/// Moment accumulators for a list of parameter arrays.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[&Array<T>]) -> Self {
        let zeros = |p: &&Array<T>| vec![T::zero(); p.len()];
        Self {
            config,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update applied in place.
    pub fn step(&mut self, params: &mut [Array<T>], grads: &[Array<T>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "{} params, {} grads, state for {}",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.first[i].len() {
                return Err(Error::dim(
                    "adam_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }

        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);
        let wd = T::from_f64_lossy(c.weight_decay);
        let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let mut data = std::mem::take(p).into_data();
            for (((w, &gi), mi), vi) in data.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi + wd * *w;
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
            *p = Array::new(g.shape().to_vec(), data)?.check_finite("adam_step")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamConfig {
        AdamConfig {
            lr,
            weight_decay: wd,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Array::<f32>::vector(vec![1.0, -2.0, 3.0])];
        let mut state = AdamState::new(cfg(0.1, 0.0), &[&params[0]]);
        let grads = vec![Array::zeros(vec![3])];
        state.step(&mut params, &grads).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is
        // lr * g / (|g| + eps).
        let mut params = vec![Array::<f64>::scalar(0.5)];
        let mut state = AdamState::new(cfg(0.1, 0.0), &[&params[0]]);
        state.step(&mut params, &[Array::scalar(1.0)]).unwrap();
        let expected = 0.5 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_params_update_identically() {
        let mut params = vec![Array::<f32>::vector(vec![0.3, 0.3])];
        let mut state = AdamState::new(cfg(0.01, 5e-5), &[&params[0]]);
        for _ in 0..5 {
            state.step(&mut params, &[Array::vector(vec![0.7, 0.7])]).unwrap();
        }
        assert_eq!(params[0].data()[0], params[0].data()[1]);
    }

    #[test]
    fn weight_decay_couples_into_gradient() {
        // With zero gradient the decay term alone drives the update.
        let mut params = vec![Array::<f64>::scalar(2.0)];
        let mut state = AdamState::new(cfg(0.1, 0.5), &[&params[0]]);
        state.step(&mut params, &[Array::scalar(0.0)]).unwrap();
        assert!((params[0].data()[0] - (2.0 - 0.1)).abs() < 1e-8);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut params = vec![Array::<f32>::vector(vec![1.0, 2.0])];
        let mut state = AdamState::new(cfg(0.1, 0.0), &[&params[0]]);
        let err = state.step(&mut params, &[Array::zeros(vec![3])]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }
}
