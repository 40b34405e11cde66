use crate::arch::{RawPrediction, STRIDES};
use crate::tensor::{sigmoid, softplus};

use super::{check_threshold, BBox, Detection, PostprocessError};

/// Decode one image of a batch into detections in network-input pixels.
///
/// Cells are visited level by level in row-major order; each cell emits at
/// most one detection for its best-scoring class.
pub fn decode(
    raw: &RawPrediction,
    image: usize,
    conf_thresh: f32,
) -> Result<Vec<Detection>, PostprocessError> {
    check_threshold("conf", conf_thresh)?;
    if image >= raw.batch() {
        return Err(PostprocessError::Shape(format!(
            "image {image} out of range for batch of {}",
            raw.batch()
        )));
    }
    if raw.levels.len() != STRIDES.len() {
        return Err(PostprocessError::Shape(format!(
            "expected {} levels, got {}",
            STRIDES.len(),
            raw.levels.len()
        )));
    }
    let size = raw.input_size as f32;
    let mut out = Vec::new();
    for (level, &stride) in raw.levels.iter().zip(&STRIDES) {
        let bs = level.boxes.shape();
        let (h, w) = (bs[2], bs[3]);
        let nc = level.cls.shape()[1];
        if level.stride != stride || h * stride != raw.input_size || w * stride != raw.input_size {
            return Err(PostprocessError::Shape(format!(
                "level with stride {} has grid {h}x{w} for input {} (expected stride {stride})",
                level.stride, raw.input_size
            )));
        }
        if bs[1] != 4 || level.obj.shape()[2..] != bs[2..] || level.cls.shape()[2..] != bs[2..] {
            return Err(PostprocessError::Shape(format!(
                "head tensors disagree: boxes {:?}, obj {:?}, cls {:?}",
                bs,
                level.obj.shape(),
                level.cls.shape()
            )));
        }
        let hw = h * w;
        let boxes = &level.boxes.data()[image * 4 * hw..(image + 1) * 4 * hw];
        let obj = &level.obj.data()[image * hw..(image + 1) * hw];
        let cls = &level.cls.data()[image * nc * hw..(image + 1) * nc * hw];
        let s = stride as f32;
        for r in 0..h {
            for c in 0..w {
                let cell = r * w + c;
                let (class_id, best) = (0..nc)
                    .map(|k| (k, cls[k * hw + cell]))
                    .fold((0, f32::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
                let confidence = sigmoid(obj[cell]) * sigmoid(best);
                if confidence < conf_thresh {
                    continue;
                }
                let d = |k: usize| softplus(boxes[k * hw + cell]) * s;
                let (cx, cy) = ((c as f32 + 0.5) * s, (r as f32 + 0.5) * s);
                let bbox = BBox::new(cx - d(0), cy - d(1), cx + d(2), cy + d(3)).clamp(size, size);
                out.push(Detection {
                    bbox,
                    confidence,
                    class_id,
                });
            }
        }
    }
    Ok(out)
}

/// Decode every image of the batch.
pub fn decode_batch(raw: &RawPrediction, conf_thresh: f32) -> Result<Vec<Vec<Detection>>, PostprocessError> {
    (0..raw.batch()).map(|i| decode(raw, i, conf_thresh)).collect()
}
