//! Adam with bias correction over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{DdkError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(DdkError::Dimension {
                context: "adam parameters",
                expected: self.m.len(),
                actual: params.len(),
            });
        }
        if grads.len() != params.len() {
            return Err(DdkError::Dimension {
                context: "adam gradients",
                expected: params.len(),
                actual: grads.len(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_fresh_state_is_a_no_op() {
        let mut p = vec![1.0, -2.0, 3.0];
        let before = p.clone();
        let mut st = AdamState::new(3, 1e-3);
        st.update(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut p = vec![1.0];
        let mut st = AdamState::new(1, 1e-3);
        st.m[0] = 0.5;
        st.v[0] = 0.25;
        st.update(&mut p, &[0.0]).unwrap();
        assert!((st.m[0] - 0.45).abs() < 1e-15);
        assert!((st.v[0] - 0.24975).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_unit_scaled() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(1, 0.001);
        st.update(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.001).abs() < 1e-10, "{}", p[0]);
    }

    #[test]
    fn descends_quadratic() {
        let mut w = vec![1.0];
        let mut st = AdamState::new(1, 0.01);
        let mut f = w[0] * w[0];
        for _ in 0..10 {
            let g = [2.0 * w[0]];
            st.update(&mut w, &g).unwrap();
            let next = w[0] * w[0];
            assert!(next < f);
            f = next;
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut st = AdamState::new(2, 0.01);
        assert!(st.update(&mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(st.update(&mut [0.0; 2], &[0.0; 1]).is_err());
    }
}
