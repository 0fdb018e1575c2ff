//! Decoupled-weight-decay Adam with two learning-rate groups, global
//! gradient clipping, and a reduce-on-plateau schedule.

use crate::error::{Error, Result};
use crate::params::{Arr, ParamStore};
use serde::{Deserialize, Serialize};

/// Parameters whose dotted name starts with this prefix form the low-rate
/// group (the pretrained-style encoder); everything else is the decoder.
pub const ENCODER_PREFIX: &str = "backbone.";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub encoder_lr: f64,
    pub decoder_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            encoder_lr: 2e-5,
            decoder_lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_lr <= 0.0 || self.decoder_lr <= 0.0 {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight decay must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if self.eps <= 0.0 {
            return Err(Error::config("optimizer eps must be positive"));
        }
        Ok(())
    }
}

/// Moment slots are indexed by parameter id, i.e. registration order.
pub struct AdamW {
    steps: u64,
    m: Vec<Arr>,
    v: Vec<Arr>,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for id in store.ids() {
            let zero = Arr::zeros(store.value(id).shape());
            m.push(zero.clone());
            v.push(zero);
        }
        AdamW { steps: 0, m, v }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn slots(&self) -> (&[Arr], &[Arr]) {
        (&self.m, &self.v)
    }

    /// Rebuild from checkpointed state. Slot shapes must match the store.
    pub fn from_slots(store: &ParamStore, steps: u64, m: Vec<Arr>, v: Vec<Arr>) -> Result<Self> {
        if m.len() != store.len() || v.len() != store.len() {
            return Err(Error::Checkpoint("optimizer slot count mismatch".into()));
        }
        for id in store.ids() {
            let shape = store.value(id).shape();
            if m[id.index()].shape() != shape || v[id.index()].shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "optimizer slot shape mismatch for {}",
                    store.name(id)
                )));
            }
        }
        Ok(AdamW { steps, m, v })
    }

    /// One update over every parameter that received a gradient. Learning
    /// rates are scaled by the schedule and floored at `min_lr`; weight decay
    /// is decoupled (applied to the raw parameter, scaled by the rate).
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        cfg: &OptimConfig,
        lr_scale: f64,
        min_lr: f64,
    ) {
        self.steps += 1;
        let t = self.steps as f64;
        let bias1 = 1.0 - cfg.beta1.powf(t);
        let bias2 = 1.0 - cfg.beta2.powf(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(grad) = store.grad(id) else { continue };
            let grad = grad.clone();
            let base = if store.name(id).starts_with(ENCODER_PREFIX) {
                cfg.encoder_lr
            } else {
                cfg.decoder_lr
            };
            let lr = (base * lr_scale).max(min_lr);
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            m.zip_mut_with(&grad, |m, g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
            v.zip_mut_with(&grad, |v, g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
            let wd = cfg.weight_decay;
            let (beta_eps, m_ref, v_ref) = (cfg.eps, &*m, &*v);
            let value = store.value_mut(id);
            ndarray::Zip::from(value)
                .and(m_ref)
                .and(v_ref)
                .for_each(|p, &m, &v| {
                    let update = (m / bias1) / ((v / bias2).sqrt() + beta_eps);
                    *p -= lr * (update + wd * *p);
                });
        }
    }
}

/// Scales gradients so their global norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm > 0.0 {
        store.scale_grads(max_norm / norm);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig { factor: 0.5, patience: 10, min_lr: 1e-6 }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.factor) || self.factor <= 0.0 {
            return Err(Error::config("plateau factor must lie in (0, 1)"));
        }
        if self.patience == 0 {
            return Err(Error::config("plateau patience must be positive"));
        }
        if self.min_lr <= 0.0 {
            return Err(Error::config("min_lr must be positive"));
        }
        Ok(())
    }
}

/// Tracks the monitored value; after `patience` consecutive epochs without
/// improvement the rate scale is multiplied by `factor`.
#[derive(Clone, Copy, Debug)]
pub struct Plateau {
    pub best: f64,
    pub bad_epochs: usize,
    pub scale: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau { best: f64::INFINITY, bad_epochs: 0, scale: 1.0 }
    }
}

impl Plateau {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed one epoch's monitored value; returns true when the scale was
    /// just reduced.
    pub fn observe(&mut self, value: f64, cfg: &PlateauConfig) -> bool {
        if value < self.best {
            self.best = value;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= cfg.patience {
            self.scale *= cfg.factor;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}
