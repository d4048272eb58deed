//! Gradient-descent parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    adam: AdamConfig,
    /// Present iff `kind == Adam`, one entry per parameter.
    moments: Option<Vec<Moments>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[Tensor]) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        let moments = (kind == OptimizerKind::Adam).then(|| {
            params
                .iter()
                .map(|p| Moments {
                    m: vec![0.0; p.len()],
                    v: vec![0.0; p.len()],
                })
                .collect()
        });
        Ok(OptimizerState {
            kind,
            lr,
            step: 0,
            adam: AdamConfig::default(),
            moments,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr, &[])
    }

    pub fn adam(lr: f64, params: &[Tensor]) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr, params)
    }

    pub fn with_adam_config(mut self, cfg: AdamConfig) -> Self {
        self.adam = cfg;
        self
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn has_moments(&self) -> bool {
        self.moments.is_some()
    }

    /// One update of every parameter from its gradient buffer.
    ///
    /// SGD applies `theta <- theta - lr * grad`. Adam applies the
    /// bias-corrected moment update. The step counter advances by one.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        let grads = params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.grad()
                    .ok_or_else(|| Error::Contract(format!("parameter {i} has no gradient")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(moments) = &self.moments {
            if moments.len() != params.len() {
                return Err(Error::Contract(format!(
                    "optimizer tracks {} parameters, step() got {}",
                    moments.len(),
                    params.len()
                )));
            }
        }

        self.step += 1;
        let lr = self.lr;
        match self.moments.as_mut() {
            None => {
                for (p, g) in params.iter().zip(&grads) {
                    p.update_data(|theta| {
                        theta.iter_mut().zip(g).for_each(|(t, g)| *t -= lr * g);
                    })?;
                }
            }
            Some(moments) => {
                let AdamConfig { beta1, beta2, eps } = self.adam;
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for ((p, g), mo) in params.iter().zip(&grads).zip(moments.iter_mut()) {
                    if mo.m.len() != g.len() {
                        return Err(Error::Dimension(
                            "moment buffer does not match parameter".into(),
                        ));
                    }
                    p.update_data(|theta| {
                        for i in 0..theta.len() {
                            mo.m[i] = beta1 * mo.m[i] + (1.0 - beta1) * g[i];
                            mo.v[i] = beta2 * mo.v[i] + (1.0 - beta2) * g[i] * g[i];
                            let m_hat = mo.m[i] / bc1;
                            let v_hat = mo.v[i] / bc2;
                            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                        }
                    })?;
                }
            }
        }
        Ok(())
    }
}

pub fn zero_grad(params: &[Tensor]) {
    params.iter().for_each(Tensor::zero_grad);
}
