use serde::{Deserialize, Serialize};

use super::{Network, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    SgdMomentum {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Self::SgdMomentum { lr, momentum }
    }

    pub fn adam(lr: f64) -> Self {
        Self::Adam { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_adam_eps() }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::SgdMomentum { lr, .. } | Self::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        match *self {
            Self::SgdMomentum { momentum, .. } if !(0.0..1.0).contains(&momentum) => {
                Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {momentum}")))
            }
            Self::Adam { beta1, beta2, eps, .. } if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 => {
                Err(Error::InvalidArgument("adam betas must be in [0, 1) and eps > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Optimizer with per-parameter state buffers, lazily sized on first step.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Scalar> {
    config: OptimizerConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, first: Vec::new(), second: Vec::new(), steps: 0 })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update from the gradients held in `net`'s parameters.
    pub fn step(&mut self, net: &mut Network<T>) -> Result<()> {
        let mut params = net.params_mut();
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            if matches!(self.config, OptimizerConfig::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        if self.first.len() != params.len() || self.first.iter().zip(&params).any(|(s, p)| s.len() != p.numel()) {
            return Err(Error::Shape("optimizer state does not match network parameters".into()));
        }
        self.steps += 1;
        match self.config {
            OptimizerConfig::SgdMomentum { lr, momentum } => {
                let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
                for (p, vel) in params.iter_mut().zip(&mut self.first) {
                    let (value, grad) = p.value_and_grad_mut();
                    let Some(grad) = grad else { continue };
                    for ((w, g), v) in value.iter_mut().zip(grad.iter()).zip(vel.iter_mut()) {
                        *v = mu * *v + *g;
                        *w = *w - lr * *v;
                    }
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let step = T::from_f64(lr * c2.sqrt() / c1);
                let (b1, b2, eps) = (T::from_f64(beta1), T::from_f64(beta2), T::from_f64(eps * c2.sqrt()));
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let (value, grad) = p.value_and_grad_mut();
                    let Some(grad) = grad else { continue };
                    for (((w, g), m), v) in value.iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (T::one() - b1) * *g;
                        *v = b2 * *v + (T::one() - b2) * *g * *g;
                        *w = *w - step * *m / (v.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
