//! AdamW with decoupled weight decay, and the warmup + cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// One AdamW update of `params` in place; `step` is 1-based.
///
/// `p ← p − lr·(m̂/(√v̂ + eps) + wd·p)`
pub fn adamw_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut Moments<T>,
    step: u64,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::contract(format!(
            "adamw: {} params, {} grads, {} state entries",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if step == 0 {
        return Err(Error::contract("adamw step counter is 1-based"));
    }
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let bc1 = T::lit(1.0 - cfg.beta1.powi(step as i32));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(step as i32));
    let (lr, wd, eps) = (T::lit(lr), T::lit(cfg.weight_decay), T::lit(cfg.eps));
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
    }
    Ok(())
}

/// AdamW over a whole [`ParamStore`]; frozen parameters are skipped.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    state: Vec<Moments<T>>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            state: store.iter().map(|(_, _, t)| Moments::zeros(t.numel())).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are treated as having a
    /// zero gradient (weight decay and momentum still act on them).
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.state.len() != store.len() {
            return Err(Error::contract(format!(
                "optimizer built for {} params, store has {}, got {} grads",
                self.state.len(),
                store.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let ids: Vec<_> = store.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            if store.is_frozen(id) {
                continue;
            }
            let p = store.get_mut(id);
            let zeros;
            let g = match g {
                Some(g) => {
                    if g.shape() != p.shape() {
                        return Err(Error::contract(format!(
                            "gradient shape {:?} for parameter of shape {:?}",
                            g.shape(),
                            p.shape()
                        )));
                    }
                    g.data()
                }
                None => {
                    zeros = vec![T::zero(); p.numel()];
                    &zeros
                }
            };
            adamw_step(p.data_mut(), g, &mut self.state[id.index()], self.step, lr, &self.cfg)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            base_lr: 2e-5,
            weight_decay: 0.1,
            warmup_epochs: 5,
            total_epochs: 200,
            steps_per_epoch: 1,
            batch_size: 32,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::config(format!("learning rate {} must be positive", self.base_lr)));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::config(format!(
                "warmup epochs {} exceed total epochs {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::config("steps per epoch and batch size must be positive"));
        }
        Ok(())
    }
}

/// Learning rate at `step` (within `epoch`): linear warmup from 0 to `base_lr`, then
/// half-cosine decay to 0 at the end of the last epoch.
pub fn lr_at(step: usize, epoch: usize, cfg: &ScheduleConfig) -> f64 {
    let t = epoch as f64 + step as f64 / cfg.steps_per_epoch.max(1) as f64;
    let warm = cfg.warmup_epochs as f64;
    if t < warm {
        return cfg.base_lr * t / warm;
    }
    let span = (cfg.total_epochs - cfg.warmup_epochs.min(cfg.total_epochs)) as f64;
    if span == 0.0 {
        return cfg.base_lr;
    }
    let progress = ((t - warm) / span).clamp(0.0, 1.0);
    cfg.base_lr * 0.5 * (1.0 + (PI * progress).cos())
}
