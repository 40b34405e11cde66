use crate::arch::{ModelConfig, MAX_STRIDE};
use crate::kv::{self, KvMap};
use crate::tensor::LrSchedule;

use super::TrainError;

/// Weights of the three loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub box_: f32,
    pub obj: f32,
    pub cls: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            box_: 7.5,
            obj: 1.0,
            cls: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Square network input side during training and validation.
    pub image_size: usize,
    pub lr0: f32,
    /// Final learning rate as a fraction of `lr0`.
    pub final_lr_fraction: f32,
    pub warmup_epochs: f32,
    pub weight_decay: f32,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Random horizontal flips of training images.
    pub hflip: bool,
    /// Thresholds used for per-epoch validation.
    pub eval_conf: f32,
    pub eval_iou: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            image_size: 160,
            lr0: 0.001,
            final_lr_fraction: 0.01,
            warmup_epochs: 3.0,
            weight_decay: 0.01,
            seed: 0,
            loss_weights: LossWeights::default(),
            hflip: true,
            eval_conf: crate::postprocess::DEFAULT_CONF,
            eval_iou: crate::postprocess::DEFAULT_IOU,
        }
    }
}

impl TrainConfig {
    /// Warmup then cosine decay ending at the last configured epoch.
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr0: self.lr0,
            final_fraction: self.final_lr_fraction,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.epochs as f32,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.image_size == 0 || self.image_size % MAX_STRIDE != 0 {
            return bad(format!("image_size {} is not a positive multiple of {MAX_STRIDE}", self.image_size));
        }
        if !(self.lr0 > 0.0) || !(0.0..=1.0).contains(&self.final_lr_fraction) || self.warmup_epochs < 0.0 {
            return bad("lr0 must be positive, final_lr_fraction in [0, 1], warmup_epochs >= 0".into());
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative".into());
        }
        let w = self.loss_weights;
        if [w.box_, w.obj, w.cls].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("loss weights must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.eval_conf) || !(0.0..=1.0).contains(&self.eval_iou) {
            return bad("eval thresholds must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        kv::render([
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("image_size", self.image_size.to_string()),
            ("lr0", self.lr0.to_string()),
            ("final_lr_fraction", self.final_lr_fraction.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("seed", self.seed.to_string()),
            ("box_weight", self.loss_weights.box_.to_string()),
            ("obj_weight", self.loss_weights.obj.to_string()),
            ("cls_weight", self.loss_weights.cls.to_string()),
            ("hflip", self.hflip.to_string()),
            ("eval_conf", self.eval_conf.to_string()),
            ("eval_iou", self.eval_iou.to_string()),
        ])
    }

    fn from_kv(kv: &mut KvMap) -> Result<Self, TrainError> {
        let mut c = Self::default();
        kv.take_into("epochs", &mut c.epochs)?;
        kv.take_into("batch_size", &mut c.batch_size)?;
        kv.take_into("image_size", &mut c.image_size)?;
        kv.take_into("lr0", &mut c.lr0)?;
        kv.take_into("final_lr_fraction", &mut c.final_lr_fraction)?;
        kv.take_into("warmup_epochs", &mut c.warmup_epochs)?;
        kv.take_into("weight_decay", &mut c.weight_decay)?;
        kv.take_into("seed", &mut c.seed)?;
        kv.take_into("box_weight", &mut c.loss_weights.box_)?;
        kv.take_into("obj_weight", &mut c.loss_weights.obj)?;
        kv.take_into("cls_weight", &mut c.loss_weights.cls)?;
        kv.take_into("hflip", &mut c.hflip)?;
        kv.take_into("eval_conf", &mut c.eval_conf)?;
        kv.take_into("eval_iou", &mut c.eval_iou)?;
        Ok(c)
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut kv = KvMap::parse(text)?;
        let c = Self::from_kv(&mut kv)?;
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }
}

/// Parse one file holding both training and model keys, so the same file
/// drives every variant.
pub fn parse_run_config(text: &str) -> Result<(TrainConfig, ModelConfig), TrainError> {
    let mut kv = KvMap::parse(text)?;
    let train = TrainConfig::from_kv(&mut kv)?;
    let model = ModelConfig::from_kv(&mut kv)?;
    kv.finish()?;
    train.validate()?;
    model.validate()?;
    Ok((train, model))
}
