//! End-to-end detection: letterbox, forward, decode, NMS, and mapping back
//! to the original frame; plus dataset evaluation built on top of it.

use std::time::{Duration, Instant};

use crate::arch::Model;
use crate::data::{load_image, read_labels, Image, Manifest};
use crate::exec;
use crate::metrics::{map_range, Annotation, EvalReport, ImageEval};
use crate::postprocess::{decode, letterbox_into, nms, BBox, Detection, LetterboxMap};
use crate::tensor::Tensor;
use crate::Error;

/// An image letterboxed for the network, with its labels in original pixels.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub input: Image,
    pub map: LetterboxMap,
    pub gts: Vec<(usize, BBox)>,
}

impl Prepared {
    pub fn new(image: &Image, gts: Vec<(usize, BBox)>, content: usize, canvas: usize) -> Result<Self, Error> {
        let (input, map) = letterbox_into(image, content, canvas)?;
        Ok(Self { input, map, gts })
    }

    pub fn frame(&self) -> (usize, usize) {
        (self.map.orig_width, self.map.orig_height)
    }

    /// Labels mapped into network-input pixels.
    pub fn network_gts(&self) -> Vec<(usize, BBox)> {
        self.gts.iter().map(|&(c, b)| (c, self.map.to_network(&b))).collect()
    }
}

/// Load every sample of a manifest, letterboxing `content` pixels onto a
/// `canvas`-sized input.
pub fn load_prepared(manifest: &Manifest, content: usize, canvas: usize) -> Result<Vec<Prepared>, Error> {
    exec::map_indexed(manifest.len(), |i| {
        let s = &manifest.samples[i];
        let img = load_image(&s.image)?;
        let gts = read_labels(&s.label, img.width, img.height)?;
        Prepared::new(&img, gts, content, canvas)
    })
    .into_iter()
    .collect()
}

/// Stack equally sized images into an `[n, 3, h, w]` tensor.
pub fn batch_tensor(images: &[&Image]) -> Tensor {
    let (h, w) = (images[0].height, images[0].width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for im in images {
        assert_eq!((im.height, im.width), (h, w), "batch images must share a size");
        data.extend_from_slice(&im.data);
    }
    Tensor::new(vec![images.len(), 3, h, w], data).expect("non-empty batch")
}

/// Wall time spent in each pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub preprocess: Duration,
    pub forward: Duration,
    pub postprocess: Duration,
}

/// A model plus the thresholds and input geometry used at inference.
pub struct Detector<'m> {
    pub model: &'m Model,
    /// Side of the square network input.
    pub canvas: usize,
    /// Side the image content is scaled to fit; at most `canvas`.
    pub content: usize,
    pub conf: f32,
    pub iou: f32,
}

impl<'m> Detector<'m> {
    pub fn new(model: &'m Model, size: usize, conf: f32, iou: f32) -> Self {
        Self {
            model,
            canvas: size,
            content: size,
            conf,
            iou,
        }
    }

    /// Detections for already letterboxed inputs, in original-frame pixels.
    pub fn detect_prepared(&self, items: &[&Prepared]) -> Result<Vec<Vec<Detection>>, Error> {
        let inputs: Vec<&Image> = items.iter().map(|p| &p.input).collect();
        let raw = self.model.predict(batch_tensor(&inputs))?;
        items
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let dets = nms(&decode(&raw, i, self.conf)?, self.iou)?;
                Ok(dets.iter().map(|d| p.map.unletterbox(d)).collect())
            })
            .collect()
    }

    /// Full single-frame pipeline with per-stage timing.
    pub fn detect(&self, image: &Image) -> Result<(Vec<Detection>, StageTimes), Error> {
        let t0 = Instant::now();
        let (input, map) = letterbox_into(image, self.content, self.canvas)?;
        let batch = batch_tensor(&[&input]);
        let t1 = Instant::now();
        let raw = self.model.predict(batch)?;
        let t2 = Instant::now();
        let dets = nms(&decode(&raw, 0, self.conf)?, self.iou)?;
        let dets = dets.iter().map(|d| map.unletterbox(d)).collect();
        let t3 = Instant::now();
        Ok((
            dets,
            StageTimes {
                preprocess: t1 - t0,
                forward: t2 - t1,
                postprocess: t3 - t2,
            },
        ))
    }

    /// Detect over prepared samples in batches of `batch`.
    pub fn detect_all(&self, data: &[Prepared], batch: usize) -> Result<Vec<Vec<Detection>>, Error> {
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.chunks(batch.max(1)) {
            let refs: Vec<&Prepared> = chunk.iter().collect();
            out.extend(self.detect_prepared(&refs)?);
        }
        Ok(out)
    }
}

/// Pair predictions with labels for the evaluator, in original pixels.
pub fn eval_images(data: &[Prepared], preds: Vec<Vec<Detection>>) -> Vec<ImageEval> {
    data.iter()
        .zip(preds)
        .enumerate()
        .map(|(i, (p, dets))| {
            let gts = p
                .gts
                .iter()
                .map(|&(class_id, bbox)| Annotation {
                    image_id: i,
                    bbox,
                    class_id,
                })
                .collect();
            ImageEval::new(i, p.frame(), gts, dets)
        })
        .collect()
}

/// Run the detector over a prepared split and compute the full report.
pub fn evaluate(detector: &Detector<'_>, data: &[Prepared], batch: usize) -> Result<EvalReport, Error> {
    let preds = detector.detect_all(data, batch)?;
    Ok(map_range(&eval_images(data, preds))?)
}
