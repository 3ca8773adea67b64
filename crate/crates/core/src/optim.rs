//! First-order optimizers and the learning-rate schedule.
//!
//! Each optimizer owns moment buffers aligned with one [`ParamSet`]; the model
//! and the halting policy get separate instances so their updates never mix.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::{Grads, ParamSet};

/// `start · (1 − step/total)^power`, reaching exactly 0 at `total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyDecay {
    pub start: f64,
    pub total: u64,
    pub power: f64,
}

impl PolyDecay {
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.total == 0 || step >= self.total {
            return 0.0;
        }
        self.start * (1.0 - step as f64 / self.total as f64).powf(self.power)
    }
}

fn check(params: &ParamSet, grads: &Grads, op: &str) -> Result<()> {
    if grads.0.len() != params.len() {
        return Err(Error::Contract(format!(
            "{op}: {} gradients for {} parameters",
            grads.0.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(&grads.0) {
        if p.value.shape() != g.shape() {
            return Err(Error::Dimension {
                op: "optimizer",
                lhs: p.value.shape(),
                rhs: g.shape(),
            });
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!("{op}: non-finite gradient for {}", p.name)));
        }
    }
    Ok(())
}

fn zeros_like(params: &ParamSet) -> Vec<Tensor> {
    params.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        Adam {
            config,
            step: 0,
            m: zeros_like(params),
            v: zeros_like(params),
        }
    }

    /// Bias-corrected Adam update with learning rate `lr`.
    pub fn update(&mut self, params: &mut ParamSet, grads: &Grads, lr: f64) -> Result<()> {
        check(params, grads, "adam")?;
        if self.m.len() != params.len() {
            return Err(Error::Contract("adam state does not match parameters".into()));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(&grads.0).enumerate() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, (w, &gi)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                *w -= step;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            decay: 0.9,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    pub step: u64,
    pub square: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, params: &ParamSet) -> Self {
        RmsProp {
            config,
            step: 0,
            square: zeros_like(params),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &Grads, lr: f64) -> Result<()> {
        check(params, grads, "rmsprop")?;
        if self.square.len() != params.len() {
            return Err(Error::Contract("rmsprop state does not match parameters".into()));
        }
        self.step += 1;
        let RmsPropConfig { decay, eps } = self.config;
        for (k, (p, g)) in params.iter_mut().zip(&grads.0).enumerate() {
            let s = self.square[k].data_mut();
            for (i, (w, &gi)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                s[i] = decay * s[i] + (1.0 - decay) * gi * gi;
                *w -= lr * gi / (s[i].sqrt() + eps);
            }
        }
        Ok(())
    }
}
