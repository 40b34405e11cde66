use std::cmp::Ordering;

use super::{check_threshold, Detection, PostprocessError};

/// Processing order: confidence descending, then larger area, then input order.
fn rank(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(Ordering::Equal)
            .then_with(|| {
                dets[b]
                    .bbox
                    .area()
                    .partial_cmp(&dets[a].bbox.area())
                    .unwrap_or(Ordering::Equal)
            })
            .then(a.cmp(&b))
    });
    order
}

/// Indices of the detections kept by class-agnostic greedy NMS, in output
/// order. A box is suppressed when its IoU with any kept box exceeds
/// `iou_thresh`.
pub fn nms_indices(dets: &[Detection], iou_thresh: f32) -> Result<Vec<usize>, PostprocessError> {
    check_threshold("iou", iou_thresh)?;
    let thresh = iou_thresh as f64;
    let mut kept: Vec<usize> = Vec::new();
    for i in rank(dets) {
        if kept.iter().all(|&k| dets[k].bbox.iou(&dets[i].bbox) <= thresh) {
            kept.push(i);
        }
    }
    Ok(kept)
}

pub fn nms(dets: &[Detection], iou_thresh: f32) -> Result<Vec<Detection>, PostprocessError> {
    Ok(nms_indices(dets, iou_thresh)?.into_iter().map(|i| dets[i]).collect())
}
