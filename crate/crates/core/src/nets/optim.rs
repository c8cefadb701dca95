use serde::{Deserialize, Serialize};

use crate::error::{PpdeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam { lr: default_lr(), beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, n_params: usize) -> Self {
        let moments = if matches!(config, OptimizerConfig::Adam { .. }) { n_params } else { 0 };
        Self { config, m: vec![0.0; moments], v: vec![0.0; moments], t: 0 }
    }

    /// Swaps hyperparameters while keeping the moment estimates.
    pub fn set_config(&mut self, config: OptimizerConfig) {
        self.config = config;
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update; non-finite gradients abort before any change.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(PpdeError::Shape(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(PpdeError::Training(format!(
                "non-finite gradient {} at parameter {i} on step {}",
                grads[i],
                self.t + 1
            )));
        }
        self.t += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Euclidean norm, used in diagnostics.
pub fn grad_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut p = vec![1.0, -2.0];
        Optimizer::new(OptimizerConfig::Sgd { lr: 0.0 }, 2).step(&mut p, &[5.0, 3.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn sgd_single_step() {
        let mut p = vec![1.0];
        Optimizer::new(OptimizerConfig::Sgd { lr: 0.1 }, 1).step(&mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_converges_on_quadratic_bowl() {
        let mut p = vec![0.0];
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.1 }, 1);
        for _ in 0..200 {
            let g = 2.0 * (p[0] - 5.0);
            opt.step(&mut p, &[g]).unwrap();
        }
        assert!((p[0] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.0, 0.0];
        Optimizer::new(OptimizerConfig::default(), 2).step(&mut p, &[3.0, -0.5]).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-9);
        assert!((p[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_is_a_training_error() {
        let mut p = vec![1.0];
        let mut opt = Optimizer::new(OptimizerConfig::default(), 1);
        assert!(matches!(opt.step(&mut p, &[f64::NAN]), Err(PpdeError::Training(_))));
        assert!(opt.step(&mut p, &[f64::INFINITY]).is_err());
        assert_eq!(p, vec![1.0]);
        assert!(opt.step(&mut p, &[1.0, 2.0]).is_err());
    }
}
