use super::{NnError, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for a fixed list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), NnError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(NnError::BadLength {
                expected: self.first.len(),
                got: grads.len(),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "adam",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::filled(2, 2, 0.5)];
        let before = params.clone();
        let mut state = AdamState::new(AdamConfig::default(), &params);
        state.step(&mut params, &[Tensor::zeros(2, 2)]).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let config = AdamConfig::default();
        let mut params = vec![Tensor::new(1, 3, vec![0.0, 1.0, -1.0]).unwrap()];
        let grads = [Tensor::new(1, 3, vec![0.3, -4.0, 1e-3]).unwrap()];
        let mut state = AdamState::new(config, &params);
        state.step(&mut params, &grads).unwrap();
        // m_hat = g, v_hat = g^2 after one step: update = lr * g / (|g| + eps)
        for (i, (&p, &g)) in params[0].data().iter().zip(grads[0].data()).enumerate() {
            let start = [0.0, 1.0, -1.0][i];
            let expected = start - config.lr * g / (g.abs() + config.eps);
            assert!((p - expected).abs() < 1e-15);
            assert!(((start - p).abs() - config.lr).abs() < 1e-4);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::zeros(2, 2)];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        assert!(state.step(&mut params, &[Tensor::zeros(1, 2)]).is_err());
    }
}
