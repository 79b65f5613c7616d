use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

/// Linear warmup to `peak` at `warmup`, then decay with `1/sqrt(step)`.
pub fn lr_at(step: u64, peak: f64, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::Invalid(
            "learning-rate schedule starts at step 1".into(),
        ));
    }
    if warmup == 0 {
        return Err(Error::Config("warmup_steps must be >= 1".into()));
    }
    let (s, w) = (step as f64, warmup as f64);
    Ok(peak * (s / w).min((w / s).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RAdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        RAdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Rectified Adam. Moments are kept per storage, indexed like the store.
#[derive(Clone, Debug, PartialEq)]
pub struct RAdam {
    pub cfg: RAdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl RAdam {
    pub fn new(cfg: RAdamConfig) -> Self {
        RAdam {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Rectification length `rho_t` and its limit.
    pub fn rho(&self, t: u64) -> (f64, f64) {
        let b2 = self.cfg.beta2;
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let b2t = b2.powi(t as i32);
        (rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t), rho_inf)
    }

    /// One update of every trainable storage that holds a gradient.
    pub fn update(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        for id in store.ids() {
            if let Some(g) = store.grad(id) {
                if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient(format!(
                        "{}[{bad}] = {}",
                        store.name(id),
                        g[bad]
                    )));
                }
            }
        }
        while self.m.len() < store.len() {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        self.step += 1;
        let t = self.step;
        let RAdamConfig {
            beta1: b1,
            beta2: b2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let (rho_t, rho_inf) = self.rho(t);
        let rect = if rho_t > 4.0 {
            Some(
                ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        };
        for id in store.ids() {
            if store.is_frozen(id) {
                continue;
            }
            let Some(g) = store.grad(id).map(<[f64]>::to_vec) else {
                continue;
            };
            let i = id.index();
            if self.m[i].is_empty() {
                self.m[i] = vec![0.0; g.len()];
                self.v[i] = vec![0.0; g.len()];
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = store.value_mut(id).data_mut();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                w[j] -= match rect {
                    Some(r) => lr * r * m_hat / ((v[j] / bc2).sqrt() + eps),
                    None => lr * m_hat,
                };
            }
        }
        Ok(())
    }
}
