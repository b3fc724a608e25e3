use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Steps *descend* the supplied gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Updates every parameter slice in place. `params` and `grads` must
    /// list the same slices in the same order on every call.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameter groups but {} gradient groups",
                params.len(),
                grads.len()
            )));
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len()
            || params
                .iter()
                .zip(grads)
                .zip(&self.first_moment)
                .any(|((p, g), m)| p.len() != g.len() || p.len() != m.len())
        {
            return Err(Error::shape("Adam parameter layout changed between steps"));
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut adam = AdamState::new(AdamConfig::default());
        let mut w = vec![1.0, -2.0];
        for _ in 0..5 {
            adam.update(&mut [&mut w], &[&[0.0, 0.0]]).unwrap();
        }
        assert_eq!(w, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg);
        let mut w = vec![0.0, 0.0];
        adam.update(&mut [&mut w], &[&[3.0, -0.5]]).unwrap();
        // m̂ = g and v̂ = g², so the step is lr · g/(|g|+ε).
        assert!((w[0] + 0.01).abs() < 1e-9);
        assert!((w[1] - 0.01).abs() < 1e-9);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn layout_changes_are_rejected() {
        let mut adam = AdamState::new(AdamConfig::default());
        let mut w = vec![0.0; 2];
        adam.update(&mut [&mut w], &[&[1.0, 1.0]]).unwrap();
        let mut w3 = vec![0.0; 3];
        assert!(adam.update(&mut [&mut w3], &[&[1.0, 1.0, 1.0]]).is_err());
        assert!(adam.update(&mut [&mut w], &[]).is_err());
    }
}
