use std::fmt::Write as _;
use std::time::Instant;

use lumendet::arch::MAX_STRIDE;
use lumendet::data::{load_image, read_labels, Manifest};
use lumendet::infer::Detector;
use lumendet::metrics::{map_range, Annotation, ImageEval};
use lumendet::postprocess::check_threshold;
use serde::{Deserialize, Serialize};

use super::{load_model, require, write};
use crate::{AblateArgs, CliError};

pub const ABLATION_HEADER: &str = "size,canvas,map50,map5095,fps";

/// One input size of the ablation. `canvas` is the network input side;
/// it exceeds `size` when the content is letterboxed into the next
/// multiple of the maximum stride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub size: usize,
    pub canvas: usize,
    pub map50: f64,
    pub map5095: f64,
    pub fps: f64,
}

pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.size, r.canvas, r.map50, r.map5095, r.fps).unwrap();
    }
    s
}

pub fn run(a: &AblateArgs) -> Result<Vec<AblationRow>, CliError> {
    check_threshold("conf", a.thresholds.conf)?;
    check_threshold("iou", a.thresholds.iou)?;
    if a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(CliError::Usage("--sizes must list positive sizes".into()));
    }
    let (model, _) = load_model(&a.checkpoint)?;
    require(&a.manifest, "manifest")?;
    let manifest = Manifest::load(&a.manifest)?;
    if manifest.is_empty() {
        return Err(anyhow::anyhow!("manifest {} lists no samples", a.manifest.display()).into());
    }
    let mut samples = Vec::with_capacity(manifest.len());
    for s in &manifest.samples {
        let img = load_image(&s.image)?;
        let gts = read_labels(&s.label, img.width, img.height)?;
        samples.push((img, gts));
    }
    let mut rows = Vec::with_capacity(a.sizes.len());
    for &size in &a.sizes {
        let canvas = size.div_ceil(MAX_STRIDE) * MAX_STRIDE;
        if canvas != size {
            log::info!("size {size} is not a multiple of {MAX_STRIDE}; letterboxing into a {canvas} canvas");
        }
        let det = Detector {
            model: &model,
            canvas,
            content: size,
            conf: a.thresholds.conf,
            iou: a.thresholds.iou,
        };
        let start = Instant::now();
        let mut preds = Vec::with_capacity(samples.len());
        for (img, _) in &samples {
            preds.push(det.detect(img)?.0);
        }
        let wall = start.elapsed().as_secs_f64();
        let images: Vec<ImageEval> = samples
            .iter()
            .zip(preds)
            .enumerate()
            .map(|(i, ((img, gts), dets))| {
                let gts = gts
                    .iter()
                    .map(|&(class_id, bbox)| Annotation {
                        image_id: i,
                        bbox,
                        class_id,
                    })
                    .collect();
                ImageEval::new(i, (img.width, img.height), gts, dets)
            })
            .collect();
        let report = map_range(&images)?;
        rows.push(AblationRow {
            size,
            canvas,
            map50: report.map50,
            map5095: report.map5095,
            fps: samples.len() as f64 / wall,
        });
    }
    let csv = to_csv(&rows);
    if let Some(out) = &a.out {
        write(out, &csv)?;
    }
    print!("{csv}");
    Ok(rows)
}
