//! Brute-force greedy NMS: repeatedly scan for the best undecided box, keep
//! it, and mark every undecided box overlapping it too much as suppressed.

use lumendet::postprocess::{BBox, Detection};

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.x1 as f64, a.y1 as f64, a.x2 as f64, a.y2 as f64);
    let (bx1, by1, bx2, by2) = (b.x1 as f64, b.y1 as f64, b.x2 as f64, b.y2 as f64);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn area(b: &BBox) -> f64 {
    (b.x2 as f64 - b.x1 as f64) * (b.y2 as f64 - b.y1 as f64)
}

/// Whether `i` goes before `j`: higher confidence, then larger area, then
/// lower index.
fn before(dets: &[Detection], i: usize, j: usize) -> bool {
    let (a, b) = (&dets[i], &dets[j]);
    if a.confidence != b.confidence {
        return a.confidence > b.confidence;
    }
    let (aa, ab) = (area(&a.bbox), area(&b.bbox));
    if aa != ab {
        return aa > ab;
    }
    i < j
}

pub fn nms_reference(dets: &[Detection], thresh: f32) -> Vec<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Open,
        Kept,
        Suppressed,
    }
    let mut state = vec![State::Open; dets.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..dets.len() {
            if state[i] == State::Open && best.map_or(true, |b| before(dets, i, b)) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        state[b] = State::Kept;
        kept.push(b);
        for i in 0..dets.len() {
            if state[i] == State::Open && iou(&dets[b].bbox, &dets[i].bbox) > thresh as f64 {
                state[i] = State::Suppressed;
            }
        }
    }
    kept
}
