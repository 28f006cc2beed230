use serde::{Deserialize, Serialize};

use super::{GradientSet, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig::Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig::Sgd { learning_rate }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { learning_rate } | OptimizerConfig::Adam { learning_rate, .. } => {
                learning_rate
            }
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let lr = self.learning_rate();
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(NnError::Config(format!("learning rate {lr} must be finite and >= 0")));
        }
        if let OptimizerConfig::Adam { beta1, beta2, epsilon, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(NnError::Config("Adam betas must lie in [0, 1)".into()));
            }
            if !(epsilon > 0.0) {
                return Err(NnError::Config("Adam epsilon must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Optimizer with its per-parameter state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self, NnError> {
        config.validate()?;
        Ok(Optimizer {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters are untouched if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &GradientSet) -> Result<(), NnError> {
        if params.len() != grads.tensors.len()
            || params.iter().zip(&grads.tensors).any(|(p, g)| p.len() != g.len())
        {
            return Err(NnError::Shape("gradients do not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradients".into()));
        }
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { learning_rate } => {
                for (p, g) in params.iter_mut().zip(&grads.tensors) {
                    for (w, d) in p.iter_mut().zip(g) {
                        *w -= learning_rate * d;
                    }
                }
            }
            OptimizerConfig::Adam { learning_rate, beta1, beta2, epsilon } => {
                if self.m.is_empty() {
                    self.m = grads.tensors.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.v = self.m.clone();
                }
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (k, (p, g)) in params.iter_mut().zip(&grads.tensors).enumerate() {
                    let m = &mut self.m[k];
                    let v = &mut self.v[k];
                    for i in 0..g.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
