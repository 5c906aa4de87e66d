//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in [0,1): {} {}",
                self.beta1, self.beta2
            )));
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("eps must be > 0 and weight_decay >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
struct MomentPair {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state; moments are keyed by parameter name and created lazily.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    state: IndexMap<String, MomentPair>,
    step_count: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            state: IndexMap::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over every parameter present in `grads`:
    /// `p <- p - lr (m_hat / (sqrt(v_hat) + eps) + weight_decay p)`.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &IndexMap<String, Vec<f64>>,
        lr: f64,
    ) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.data.len() != g.len() {
                return Err(Error::shape(
                    &format!("adamw grad for {name}"),
                    &[p.data.len()],
                    &[g.len()],
                ));
            }
            let slot = self.state.entry(name.clone()).or_insert_with(|| MomentPair {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            for i in 0..g.len() {
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g[i];
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                p.data[i] -=
                    lr * (m_hat / (v_hat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * p.data[i]);
            }
        }
        Ok(())
    }
}
