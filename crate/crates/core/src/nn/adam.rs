//! Bias-corrected Adam.
//!
//! ```text
//! m_k = b1 m_{k-1} + (1 - b1) g
//! v_k = b2 v_{k-1} + (1 - b2) g^2
//! p  -= lr (m_k / (1 - b1^k)) / (sqrt(v_k / (1 - b2^k)) + eps)
//! ```

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::mlp::MlpParams;
use crate::error::{FlowError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
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
fn default_epsilon() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(FlowError::InvalidArgument(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// Optimizer state: moment accumulators shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    config: AdamConfig,
    first: MlpParams<T>,
    second: MlpParams<T>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &MlpParams<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut MlpParams<T>, grads: &MlpParams<T>) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.first) {
            return Err(FlowError::InvalidArgument("gradient shapes do not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(FlowError::NonFinite("gradients".into()));
        }
        self.step += 1;
        let c = &self.config;
        let k = i32::try_from(self.step).unwrap_or(i32::MAX);
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.epsilon);
        let corr1 = T::one() - T::lit(c.beta1.powi(k));
        let corr2 = T::one() - T::lit(c.beta2.powi(k));
        let update = |p: &mut T, &g: &T, m: &mut T, v: &mut T| {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        let layers = params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.first.layers.iter_mut().zip(self.second.layers.iter_mut()));
        for ((p, g), (m, v)) in layers {
            Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(update);
            Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
        Ok(())
    }
}

pub fn adam_step<T: Scalar>(state: &mut Adam<T>, params: &mut MlpParams<T>, grads: &MlpParams<T>) -> Result<()> {
    state.step(params, grads)
}
