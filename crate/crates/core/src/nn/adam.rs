use serde::{Deserialize, Serialize};

use super::{Gradients, Model};
use crate::error::{dim_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment accumulators for a list of parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(buffer_lens: &[usize], config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: buffer_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: buffer_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(model: &Model, config: AdamConfig) -> Self {
        let lens: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        Self::new(&lens, config)
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return dim_err(format!(
                "adam tracks {} buffers, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return dim_err("adam buffer length mismatch");
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(model: &mut Model, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let g = grads.slices();
    let mut p = model.param_slices_mut();
    state.step(&mut p, &g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![1.0, -2.0, 3.0];
        let mut st = AdamState::new(&[3], AdamConfig::default());
        st.step(&mut [&mut params[..]], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step_count(), 1);
        // second step after a nonzero gradient: moments decay under g = 0
        st.step(&mut [&mut params[..]], &[&[1.0, 1.0, 1.0]]).unwrap();
        let m_before = st.first_moments()[0][0];
        st.step(&mut [&mut params[..]], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert!((st.first_moments()[0][0] - 0.9 * m_before).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig { eps: 1e-12, ..AdamConfig::with_learning_rate(0.01) };
        let mut params = [0.0, 0.0];
        let mut st = AdamState::new(&[2], cfg);
        st.step(&mut [&mut params[..]], &[&[3.0, -0.5]]).unwrap();
        assert!((params[0] + 0.01).abs() < 1e-10);
        assert!((params[1] - 0.01).abs() < 1e-10);
    }

    #[test]
    fn mismatched_buffers_fail() {
        let mut st = AdamState::new(&[2], AdamConfig::default());
        let mut p = [0.0; 3];
        assert!(st.step(&mut [&mut p[..]], &[&[0.0; 3]]).is_err());
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn converges_on_quadratic() {
        // f(x) = 0.5 xᵀ A x - bᵀ x with A = diag(1, 4, 10); minimum at A⁻¹ b.
        let a = [1.0, 4.0, 10.0];
        let b = [1.0, -2.0, 0.5];
        let x_star: Vec<f64> = a.iter().zip(&b).map(|(ai, bi)| bi / ai).collect();
        let mut x = vec![0.0; 3];
        let mut st = AdamState::new(&[3], AdamConfig::with_learning_rate(0.1));
        let grad = |x: &[f64]| -> Vec<f64> { (0..3).map(|i| a[i] * x[i] - b[i]).collect() };
        for _ in 0..200 {
            let g = grad(&x);
            st.step(&mut [&mut x[..]], &[&g]).unwrap();
        }
        let g = grad(&x);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "gradient norm {norm}");
        for (xi, si) in x.iter().zip(&x_star) {
            assert!((xi - si).abs() < 1e-3);
        }
    }
}
