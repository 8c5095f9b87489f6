//! Full-batch Adam.

use alloc::vec::Vec;

use crate::math;
use crate::{Error, Matrix, Result};

pub const DEFAULT_LR: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for an ordered list of parameter tensors. Moments are
/// allocated on the first step from the parameter shapes.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    config: AdamConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            ..Default::default()
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected update of every tensor in `params`.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid("one gradient per parameter tensor"));
        }
        if self.first.is_empty() {
            self.first = params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::invalid("parameter list changed between Adam steps"));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.steps as f64;
        let c1 = 1.0 - math::powf(beta1, t);
        let c2 = 1.0 - math::powf(beta2, t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut st = AdamState::new(AdamConfig::default());
        let mut p = vec![Matrix::column(vec![1.0, -2.0])];
        let g = vec![Matrix::zeros(2, 1)];
        for _ in 0..10 {
            st.step(&mut p, &g, 0.03).unwrap();
        }
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut st = AdamState::new(AdamConfig::default());
        let mut p = vec![Matrix::column(vec![0.0, 0.0, 0.0])];
        let g = vec![Matrix::column(vec![0.5, -3.0, 1e-3])];
        st.step(&mut p, &g, 0.03).unwrap();
        for (w, gi) in p[0].data().iter().zip(g[0].data()) {
            let want = -0.03 * gi / (gi.abs() + 1e-8);
            assert!((w - want).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_moves_by_lr_per_step() {
        let mut st = AdamState::new(AdamConfig::default());
        let mut p = vec![Matrix::scalar(0.0)];
        let g = vec![Matrix::scalar(2.5)];
        let mut prev = 0.0;
        for _ in 0..200 {
            st.step(&mut p, &g, 0.01).unwrap();
            let now = p[0].data()[0];
            assert!(((prev - now) - 0.01).abs() < 1e-9);
            prev = now;
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut st = AdamState::new(AdamConfig::default());
        let mut p = vec![Matrix::zeros(2, 1)];
        assert!(st.step(&mut p, &[Matrix::zeros(1, 2)], 0.1).is_err());
        assert!(st.step(&mut p, &[], 0.1).is_err());
    }
}
