use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::Model;
use crate::infer::{batch_tensor, evaluate, Detector, Prepared};
use crate::postprocess::BBox;
use crate::tensor::{adamw_step, Checkpoint, OptimState, Tape, TensorError};
use crate::Error;

use super::{assign_targets, compute_loss, TrainConfig, TrainError};

/// Metadata key holding the training config text inside a checkpoint.
pub const TRAIN_CONFIG_KEY: &str = "train_config";
pub const LOG_HEADER: &str = "epoch,lr,loss_box,loss_obj,loss_cls,val_map50,val_map5095";

/// One row of the training log. Losses are epoch means of the unweighted
/// terms; `lr` is the rate used by the epoch's final step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f32,
    pub loss_box: f32,
    pub loss_obj: f32,
    pub loss_cls: f32,
    pub val_map50: f64,
    pub val_map5095: f64,
}

pub fn log_csv(records: &[EpochRecord]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.epoch, r.lr, r.loss_box, r.loss_obj, r.loss_cls, r.val_map50, r.val_map5095
        )
        .unwrap();
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    /// Weights of the epoch with the highest validation mAP@0.5 (earliest on
    /// ties).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub last: Checkpoint,
}

/// Model weights plus the model and training configs.
pub fn train_checkpoint(model: &Model, cfg: &TrainConfig, epoch: usize) -> Checkpoint {
    let mut ck = model.to_checkpoint();
    ck.meta.push((TRAIN_CONFIG_KEY.to_string(), cfg.to_text()));
    ck.meta.push(("epoch".to_string(), epoch.to_string()));
    ck
}

fn flip_boxes(gts: &[(usize, BBox)], size: f32) -> Vec<(usize, BBox)> {
    gts.iter()
        .map(|&(c, b)| (c, BBox::new(size - b.x2, b.y1, size - b.x1, b.y2)))
        .collect()
}

/// Train `model` in place. Every input in `train` and `val` must already be
/// letterboxed to `cfg.image_size`. `on_epoch` sees each log record as soon
/// as it is produced.
pub fn fit(
    model: &mut Model,
    train: &[Prepared],
    val: &[Prepared],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit.into());
    }
    if let Some(p) = train.iter().chain(val).find(|p| p.input.width != cfg.image_size) {
        return Err(TrainError::Config(format!(
            "prepared input is {} px but image_size is {}",
            p.input.width, cfg.image_size
        ))
        .into());
    }
    let size = cfg.image_size;
    let schedule = cfg.schedule();
    let mut opt = OptimState::new(model.store(), cfg.lr0, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batches = train.len().div_ceil(cfg.batch_size);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = [0f64; 3];
        let mut lr = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(chunk.len());
            let mut gts = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let p = &train[i];
                if cfg.hflip && rng.gen::<bool>() {
                    images.push(p.input.flip_horizontal());
                    gts.push(flip_boxes(&p.network_gts(), size as f32));
                } else {
                    images.push(p.input.clone());
                    gts.push(p.network_gts());
                }
            }
            let refs: Vec<_> = images.iter().collect();
            let mut tape = Tape::new();
            let x = tape.leaf(batch_tensor(&refs));
            let out = model.forward(&mut tape, x, true)?;
            let targets = assign_targets(&gts, size);
            let (loss, terms) = compute_loss(&mut tape, &out, &targets, cfg.loss_weights)?;
            if !terms.total.is_finite() {
                return Err(TrainError::NonFinite {
                    what: format!("loss {terms:?}"),
                    epoch: epoch + 1,
                    batch: b + 1,
                }
                .into());
            }
            let updates = tape.take_bn_updates();
            tape.backward(loss, model.store_mut())?;
            model.store_mut().apply_bn_updates(&updates);
            lr = schedule.lr_at(epoch as f32 + (b + 1) as f32 / batches as f32)?;
            adamw_step(model.store_mut(), &mut opt, lr).map_err(|e| match e {
                TensorError::NonFiniteGrad(name) => Error::from(TrainError::NonFinite {
                    what: format!("gradient of {name}"),
                    epoch: epoch + 1,
                    batch: b + 1,
                }),
                other => other.into(),
            })?;
            sums[0] += terms.box_ as f64;
            sums[1] += terms.obj as f64;
            sums[2] += terms.cls as f64;
        }
        let (map50, map5095) = if val.is_empty() {
            (0.0, 0.0)
        } else {
            let det = Detector::new(model, size, cfg.eval_conf, cfg.eval_iou);
            let r = evaluate(&det, val, cfg.batch_size)?;
            (r.map50, r.map5095)
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            loss_box: (sums[0] / batches as f64) as f32,
            loss_obj: (sums[1] / batches as f64) as f32,
            loss_cls: (sums[2] / batches as f64) as f32,
            val_map50: map50,
            val_map5095: map5095,
        };
        log::info!(
            "epoch {}/{}: box {:.4} obj {:.4} cls {:.4} val mAP50 {:.3} mAP50-95 {:.3} ({:.1}s)",
            record.epoch,
            cfg.epochs,
            record.loss_box,
            record.loss_obj,
            record.loss_cls,
            map50,
            map5095,
            started.elapsed().as_secs_f32()
        );
        on_epoch(&record);
        log.push(record);
        let improved = match &best {
            None => true,
            Some((m, _, _)) => map50 > *m,
        };
        if improved {
            best = Some((map50, epoch + 1, train_checkpoint(model, cfg, epoch + 1)));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        log,
        best,
        best_epoch,
        last: train_checkpoint(model, cfg, cfg.epochs),
    })
}
