//! Brute-force single-class AP: explicit greedy matching followed by a
//! direct 101-point integration of the precision envelope.

use lumendet::metrics::ImageEval;

use super::nms_ref::iou;

/// `(confidence, is_tp)` per prediction in processing order, plus the GT
/// count.
pub fn greedy_match(images: &[ImageEval], thresh: f64) -> (Vec<(f32, bool)>, usize) {
    let mut pending: Vec<(usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, im)| (0..im.preds.len()).map(move |p| (i, p)))
        .collect();
    let mut used: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.gts.len()]).collect();
    let mut out = Vec::new();
    while !pending.is_empty() {
        // highest confidence; ties to the lower image id, then prediction index
        let mut pick = 0;
        for (n, &(i, p)) in pending.iter().enumerate() {
            let (bi, bp) = pending[pick];
            let (c, bc) = (images[i].preds[p].confidence, images[bi].preds[bp].confidence);
            let key = (images[i].image_id, p);
            let bkey = (images[bi].image_id, bp);
            if c > bc || (c == bc && key < bkey) {
                pick = n;
            }
        }
        let (i, p) = pending.remove(pick);
        let pred = &images[i].preds[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in images[i].gts.iter().enumerate() {
            if used[i][g] || gt.class_id != pred.class_id {
                continue;
            }
            let v = iou(&pred.bbox, &gt.bbox);
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) if v >= thresh => {
                used[i][g] = true;
                out.push((pred.confidence, true));
            }
            _ => out.push((pred.confidence, false)),
        }
    }
    (out, images.iter().map(|im| im.gts.len()).sum())
}

/// AP over the match list. Every distinct confidence is a cutoff; for each
/// recall level k/100 take the best precision among cutoffs whose recall
/// reaches it, and average over the 101 levels.
pub fn ap_reference(matches: &[(f32, bool)], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let mut cutoffs: Vec<f32> = matches.iter().map(|m| m.0).collect();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    cutoffs.dedup();
    let points: Vec<(usize, f64)> = cutoffs
        .iter()
        .map(|&c| {
            let above: Vec<bool> = matches.iter().filter(|m| m.0 >= c).map(|m| m.1).collect();
            let tp = above.iter().filter(|&&t| t).count();
            (tp, tp as f64 / above.len() as f64)
        })
        .collect();
    let mut sum = 0.0;
    for k in 0..=100usize {
        let best = points
            .iter()
            .filter(|&&(tp, _)| 100 * tp >= k * total_gt)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

pub fn map50_reference(images: &[ImageEval]) -> f64 {
    let (matches, total) = greedy_match(images, 0.5);
    ap_reference(&matches, total)
}
