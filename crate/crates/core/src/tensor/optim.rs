use std::f64::consts::PI;

use super::{ParamId, ParamStore, Result, TensorError};

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

/// AdamW moment buffers and hyperparameters.
#[derive(Clone, Debug)]
pub struct OptimState {
    /// First and second moments, indexed like the store's entries.
    moments: Vec<Option<(Vec<f32>, Vec<f32>)>>,
    step: u64,
    pub lr0: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl OptimState {
    pub fn new(store: &ParamStore, lr0: f32, weight_decay: f32) -> Self {
        let moments = store
            .ids()
            .map(|id| {
                let n = store.get(id).numel();
                (store.kind(id) == super::ParamKind::Trainable)
                    .then(|| (vec![0.0; n], vec![0.0; n]))
            })
            .collect();
        Self {
            moments,
            step: 0,
            lr0,
            weight_decay,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> Option<(&[f32], &[f32])> {
        self.moments[id.index()]
            .as_ref()
            .map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One AdamW update of every trainable parameter from its stored gradient.
///
/// Weight decay is decoupled: `p -= lr·wd·p` is applied before the
/// bias-corrected Adam update. If any gradient is non-finite nothing is
/// modified.
pub fn adamw_step(store: &mut ParamStore, state: &mut OptimState, lr: f32) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(TensorError::Invalid {
            op: "adamw_step",
            msg: format!("learning rate must be positive, got {lr}"),
        });
    }
    if state.moments.len() != store.len() {
        return Err(TensorError::Invalid {
            op: "adamw_step",
            msg: "optimizer state was built for a different store".into(),
        });
    }
    let ids: Vec<ParamId> = store.trainable_ids().collect();
    for &id in &ids {
        let t = store.get(id);
        if let Some(g) = &t.grad {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(TensorError::NonFiniteGrad(store.name(id).to_string()));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps, wd) = (state.beta1, state.beta2, state.eps, state.weight_decay);
    for id in ids {
        let (m, v) = state.moments[id.index()]
            .as_mut()
            .expect("trainable parameters have moments");
        let p = store.get_mut(id);
        let grad = p.grad.take();
        let g = grad.as_deref();
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            let gi = g.map_or(0.0, |g| g[i]);
            *x -= lr * wd * *x;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *x -= lr * mhat / (vhat.sqrt() + eps);
        }
        p.grad = grad;
    }
    Ok(())
}

/// Linear warmup followed by cosine decay, parameterized in (fractional)
/// epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr0: f32,
    /// Learning rate at the final epoch, as a fraction of `lr0`.
    pub final_fraction: f32,
    pub warmup_epochs: f32,
    pub total_epochs: f32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            final_fraction: 0.01,
            warmup_epochs: 3.0,
            total_epochs: 50.0,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: f32) -> Result<f32> {
        if !(0.0..=self.total_epochs).contains(&epoch) {
            return Err(TensorError::Invalid {
                op: "lr_at",
                msg: format!("epoch {epoch} outside [0, {}]", self.total_epochs),
            });
        }
        let (e, w, total) = (epoch as f64, self.warmup_epochs as f64, self.total_epochs as f64);
        let lr0 = self.lr0 as f64;
        if e < w {
            return Ok((lr0 * e / w) as f32);
        }
        let span = (total - w).max(f64::MIN_POSITIVE);
        let progress = ((e - w) / span).min(1.0);
        let ff = self.final_fraction as f64;
        let cosine = 0.5 * (1.0 + (PI * progress).cos());
        Ok((lr0 * (ff + (1.0 - ff) * cosine)) as f32)
    }
}
