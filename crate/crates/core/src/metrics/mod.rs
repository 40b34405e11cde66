//! Detection evaluation: greedy IoU matching, 101-point AP, mAP over IoU
//! thresholds, and the best-F1 operating point.

mod curve;

pub use curve::{export_pr_curve, pr_curve_svg};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::postprocess::{BBox, Detection};

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Recall sampling points of the AP integral.
pub const RECALL_POINTS: usize = 101;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("image {image_id}: predictions are in a {pred:?} frame but labels in {gt:?}")]
    FrameMismatch {
        image_id: usize,
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("empty match list")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: usize,
    pub bbox: BBox,
    pub class_id: usize,
}

/// Ground truth and predictions for one image, each tagged with the
/// `(width, height)` of the frame its coordinates refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEval {
    pub image_id: usize,
    pub gt_frame: (usize, usize),
    pub pred_frame: (usize, usize),
    pub gts: Vec<Annotation>,
    pub preds: Vec<Detection>,
}

impl ImageEval {
    /// Predictions and labels sharing one frame.
    pub fn new(image_id: usize, frame: (usize, usize), gts: Vec<Annotation>, preds: Vec<Detection>) -> Self {
        Self {
            image_id,
            gt_frame: frame,
            pred_frame: frame,
            gts,
            preds,
        }
    }
}

/// One prediction's outcome in processing order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchRecord {
    pub confidence: f32,
    pub tp: bool,
    pub image_id: usize,
    pub pred_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matches {
    pub records: Vec<MatchRecord>,
    pub total_gt: usize,
}

impl Matches {
    pub fn tp(&self) -> usize {
        self.records.iter().filter(|r| r.tp).count()
    }

    pub fn fp(&self) -> usize {
        self.records.len() - self.tp()
    }
}

fn check_frames(images: &[ImageEval]) -> Result<(), MetricsError> {
    for im in images {
        if im.gt_frame != im.pred_frame {
            return Err(MetricsError::FrameMismatch {
                image_id: im.image_id,
                pred: im.pred_frame,
                gt: im.gt_frame,
            });
        }
    }
    Ok(())
}

/// Greedy matching over all images. Predictions are visited by descending
/// confidence, ties broken by image id then prediction index. Each claims the
/// unmatched same-image, same-class ground truth of highest IoU (lowest index
/// on ties) when that IoU reaches `iou_thresh`.
pub fn match_predictions(images: &[ImageEval], iou_thresh: f64) -> Result<Matches, MetricsError> {
    check_frames(images)?;
    let mut order: Vec<(usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, im)| (0..im.preds.len()).map(move |p| (i, p)))
        .collect();
    order.sort_by(|&(ia, pa), &(ib, pb)| {
        let (a, b) = (&images[ia], &images[ib]);
        b.preds[pb]
            .confidence
            .partial_cmp(&a.preds[pa].confidence)
            .unwrap_or(Ordering::Equal)
            .then(a.image_id.cmp(&b.image_id))
            .then(pa.cmp(&pb))
    });
    let mut taken: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.gts.len()]).collect();
    let mut records = Vec::with_capacity(order.len());
    for (i, p) in order {
        let im = &images[i];
        let pred = &im.preds[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in im.gts.iter().enumerate() {
            if taken[i][g] || gt.class_id != pred.class_id {
                continue;
            }
            let iou = pred.bbox.iou(&gt.bbox);
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        let tp = match best {
            Some((g, iou)) if iou >= iou_thresh => {
                taken[i][g] = true;
                true
            }
            _ => false,
        };
        records.push(MatchRecord {
            confidence: pred.confidence,
            tp,
            image_id: im.image_id,
            pred_index: p,
        });
    }
    Ok(Matches {
        records,
        total_gt: images.iter().map(|im| im.gts.len()).sum(),
    })
}

/// Cumulative `(recall, precision)` after each record.
pub fn cumulative_pr(m: &Matches) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    m.records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            tp += r.tp as usize;
            let recall = if m.total_gt == 0 {
                0.0
            } else {
                tp as f64 / m.total_gt as f64
            };
            (recall, tp as f64 / (i + 1) as f64)
        })
        .collect()
}

/// 101-point interpolated AP: the mean, over recall levels 0.00..=1.00, of
/// the best precision reached at or beyond that recall. Precision and recall
/// are taken only at distinct confidence cutoffs, so tied predictions count
/// as one step whatever their order. Zero without ground truth.
pub fn average_precision(m: &Matches) -> f64 {
    if m.total_gt == 0 || m.records.is_empty() {
        return 0.0;
    }
    // (tp, precision) at the last record of each confidence group
    let mut steps: Vec<(usize, f64)> = Vec::new();
    let mut tp = 0usize;
    for (i, r) in m.records.iter().enumerate() {
        tp += r.tp as usize;
        if m.records.get(i + 1).is_some_and(|n| n.confidence == r.confidence) {
            continue;
        }
        steps.push((tp, tp as f64 / (i + 1) as f64));
    }
    for i in (0..steps.len().saturating_sub(1)).rev() {
        steps[i].1 = steps[i].1.max(steps[i + 1].1);
    }
    // recall_i >= k/100  <=>  100 * tp_i >= k * total_gt, exactly in integers
    let mut sum = 0.0;
    let mut i = 0;
    for k in 0..RECALL_POINTS {
        while i < steps.len() && 100 * steps[i].0 < k * m.total_gt {
            i += 1;
        }
        if i == steps.len() {
            break;
        }
        sum += steps[i].1;
    }
    sum / RECALL_POINTS as f64
}

/// Precision, recall and the confidence cutoff maximizing F1, sweeping every
/// distinct confidence. Ties go to the higher cutoff.
pub fn precision_recall_at_best_f1(m: &Matches) -> Result<(f64, f64, f32), MetricsError> {
    if m.records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = m.records.clone();
    sorted.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap_or(Ordering::Equal));
    let mut best: Option<(f64, f64, f64, f32)> = None;
    let mut tp = 0usize;
    for (i, r) in sorted.iter().enumerate() {
        tp += r.tp as usize;
        if sorted.get(i + 1).is_some_and(|n| n.confidence == r.confidence) {
            continue;
        }
        let p = tp as f64 / (i + 1) as f64;
        let rec = if m.total_gt == 0 {
            0.0
        } else {
            tp as f64 / m.total_gt as f64
        };
        let f1 = if p + rec > 0.0 { 2.0 * p * rec / (p + rec) } else { 0.0 };
        if best.map_or(true, |b| f1 > b.0) {
            best = Some((f1, p, rec, r.confidence));
        }
    }
    let (_, p, r, c) = best.expect("non-empty");
    Ok((p, r, c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub iou: f64,
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub confidence: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<ThresholdStats>,
    /// Cumulative curve at IoU 0.5 in descending confidence.
    pub pr_curve: Vec<PrPoint>,
    pub map50: f64,
    pub map5095: f64,
    pub precision_best_f1: f64,
    pub recall_best_f1: f64,
    pub best_f1_confidence: f32,
    pub num_images: usize,
    pub num_gt: usize,
    pub num_predictions: usize,
    /// Conditions worth surfacing, e.g. `no_ground_truth`.
    pub flags: Vec<String>,
}

/// Full report over thresholds 0.50:0.05:0.95.
pub fn map_range(images: &[ImageEval]) -> Result<EvalReport, MetricsError> {
    check_frames(images)?;
    let mut thresholds = Vec::with_capacity(10);
    let mut at50 = None;
    for t in iou_thresholds() {
        let m = match_predictions(images, t)?;
        let tp = m.tp();
        thresholds.push(ThresholdStats {
            iou: t,
            ap: average_precision(&m),
            tp,
            fp: m.fp(),
            fn_: m.total_gt - tp,
        });
        if at50.is_none() {
            at50 = Some(m);
        }
    }
    let m50 = at50.expect("ten thresholds");
    let mut flags = Vec::new();
    if m50.total_gt == 0 {
        flags.push(if m50.records.is_empty() {
            "undefined_no_gt_no_predictions".to_string()
        } else {
            "no_ground_truth".to_string()
        });
    }
    let pr_curve = if m50.records.is_empty() {
        flags.push("degenerate_pr_curve_no_predictions".to_string());
        vec![
            PrPoint {
                recall: 0.0,
                precision: 1.0,
                confidence: 1.0,
            },
            PrPoint {
                recall: 0.0,
                precision: 0.0,
                confidence: 0.0,
            },
        ]
    } else {
        cumulative_pr(&m50)
            .into_iter()
            .zip(&m50.records)
            .map(|((recall, precision), r)| PrPoint {
                recall,
                precision,
                confidence: r.confidence,
            })
            .collect()
    };
    let (precision_best_f1, recall_best_f1, best_f1_confidence) =
        precision_recall_at_best_f1(&m50).unwrap_or((0.0, 0.0, 0.0));
    let map50 = thresholds[0].ap;
    let map5095 = thresholds.iter().map(|t| t.ap).sum::<f64>() / thresholds.len() as f64;
    Ok(EvalReport {
        thresholds,
        pr_curve,
        map50,
        map5095,
        precision_best_f1,
        recall_best_f1,
        best_f1_confidence,
        num_images: images.len(),
        num_gt: m50.total_gt,
        num_predictions: m50.records.len(),
        flags,
    })
}
