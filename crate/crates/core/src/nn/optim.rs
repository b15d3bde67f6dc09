use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};
use crate::io::Bundle;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Adam with bias correction, holding first and second moments per scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the accumulated gradients and clears them.
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dims("adam state", self.m.len(), params.len()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((t, m), v) in params.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if m.len() != t.len() {
                return Err(Error::dims("adam state", m.len(), t.len()));
            }
            let Some(grad) = t.grad.take() else {
                for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                    *mi *= beta1;
                    *vi *= beta2;
                }
                for ((w, mi), vi) in t.data.iter_mut().zip(m.iter()).zip(v.iter()) {
                    *w -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                }
                continue;
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("parameter gradient".into()));
            }
            for i in 0..grad.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                t.data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn export(&self, prefix: &str, names: &[String], bundle: &mut Bundle) {
        for (name, (m, v)) in names.iter().zip(self.m.iter().zip(&self.v)) {
            bundle.push(format!("{prefix}{name}.m"), vec![m.len()], m.clone());
            bundle.push(format!("{prefix}{name}.v"), vec![v.len()], v.clone());
        }
        bundle.push(format!("{prefix}step"), vec![1], vec![self.step as f64]);
    }

    pub fn import(&mut self, prefix: &str, names: &[String], bundle: &Bundle) -> Result<()> {
        let fetch = |key: String, len: usize| -> Result<Vec<f64>> {
            let (_, d) = bundle
                .get(&key)
                .ok_or_else(|| Error::Format(format!("optimizer state lacks '{key}'")))?;
            if d.len() != len {
                return Err(Error::dims("optimizer state", len, d.len()));
            }
            Ok(d.to_vec())
        };
        for (i, name) in names.iter().enumerate() {
            self.m[i] = fetch(format!("{prefix}{name}.m"), self.m[i].len())?;
            self.v[i] = fetch(format!("{prefix}{name}.v"), self.v[i].len())?;
        }
        self.step = fetch(format!("{prefix}step"), 1)?[0] as u64;
        Ok(())
    }
}
