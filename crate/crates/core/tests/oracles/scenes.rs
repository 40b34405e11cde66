//! Random instances for the NMS and evaluator oracles.

use lumendet::metrics::{Annotation, ImageEval};
use lumendet::postprocess::{BBox, Detection};
use rand::Rng;

pub const NMS_THRESHOLDS: [f32; 3] = [0.3, 0.45, 0.7];

fn random_box<R: Rng>(rng: &mut R, extent: f32) -> BBox {
    let w = rng.gen_range(2.0..extent / 2.0);
    let h = rng.gen_range(2.0..extent / 2.0);
    let x = rng.gen_range(0.0..extent - w);
    let y = rng.gen_range(0.0..extent - h);
    BBox::new(x, y, x + w, y + h)
}

fn jitter<R: Rng>(rng: &mut R, b: &BBox, amount: f32) -> BBox {
    let mut d = || rng.gen_range(-amount..amount);
    BBox::new(b.x1 + d(), b.y1 + d(), b.x2 + d(), b.y2 + d())
}

/// Up to 20 clustered boxes. Confidences come from a coarse grid and some
/// boxes are exact copies, so every tie-break rule gets exercised.
pub fn nms_instance<R: Rng>(rng: &mut R) -> Vec<Detection> {
    let n = rng.gen_range(0..=20);
    let centers: Vec<BBox> = (0..rng.gen_range(1..=4)).map(|_| random_box(rng, 100.0)).collect();
    let mut dets: Vec<Detection> = Vec::with_capacity(n);
    for _ in 0..n {
        let bbox = if !dets.is_empty() && rng.gen_bool(0.15) {
            dets[rng.gen_range(0..dets.len())].bbox
        } else {
            let c = &centers[rng.gen_range(0..centers.len())];
            jitter(rng, c, 8.0)
        };
        let bbox = BBox::new(bbox.x1.min(bbox.x2 - 0.5), bbox.y1.min(bbox.y2 - 0.5), bbox.x2, bbox.y2);
        dets.push(Detection {
            bbox,
            confidence: rng.gen_range(1..=10) as f32 / 10.0,
            class_id: 0,
        });
    }
    dets
}

/// 1–4 images with ≤ 5 labels and ≤ 8 predictions each, single class.
pub fn eval_scene<R: Rng>(rng: &mut R) -> Vec<ImageEval> {
    (0..rng.gen_range(1..=4))
        .map(|image_id| {
            let gts: Vec<Annotation> = (0..rng.gen_range(0..=5))
                .map(|_| Annotation {
                    image_id,
                    bbox: random_box(rng, 64.0),
                    class_id: 0,
                })
                .collect();
            let preds = (0..rng.gen_range(0..=8))
                .map(|_| {
                    let bbox = if !gts.is_empty() && rng.gen_bool(0.7) {
                        let g = &gts[rng.gen_range(0..gts.len())].bbox;
                        jitter(rng, g, 4.0)
                    } else {
                        random_box(rng, 64.0)
                    };
                    Detection {
                        bbox,
                        confidence: rng.gen_range(1..=20) as f32 / 20.0,
                        class_id: 0,
                    }
                })
                .collect();
            ImageEval::new(image_id, (64, 64), gts, preds)
        })
        .collect()
}
