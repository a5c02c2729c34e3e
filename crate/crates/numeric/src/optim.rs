use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{NumericError, Result};
use crate::params::{ParamGrads, ParamStore};

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
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for every parameter of one store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Array>,
    second: Vec<Array>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, _, v)| Array::zeros(v.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient are treated as having a
    /// zero gradient (their moments still decay).
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(NumericError::Shape {
                op: "adam_step",
                detail: format!(
                    "{} grads / {} moments for {} params",
                    grads.len(),
                    self.first.len(),
                    store.len()
                ),
            });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.0;
            let p = store.get_mut(id);
            let g = grads.get(id);
            if let Some(g) = g {
                if g.len() != p.len() {
                    return Err(NumericError::Shape {
                        op: "adam_step",
                        detail: format!("gradient {:?} vs param {:?}", g.shape(), p.shape()),
                    });
                }
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let pd = p.data_mut();
            for j in 0..pd.len() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                pd[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
