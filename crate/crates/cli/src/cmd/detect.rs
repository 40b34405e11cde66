use anyhow::Context;
use lumendet::data::{load_image, save_image};
use lumendet::infer::Detector;
use lumendet::postprocess::DetectionRecord;
use serde::{Deserialize, Serialize};

use super::{frame_name, list_frames, load_model, resolve_size, write};
use crate::overlay::annotate;
use crate::{CliError, DetectArgs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedFrame {
    pub frame: String,
    pub error: String,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectSummary {
    pub frames_total: usize,
    pub frames_processed: usize,
    pub detections: usize,
    pub skipped: Vec<SkippedFrame>,
}

pub fn run(a: &DetectArgs) -> Result<(), CliError> {
    let (model, cfg) = load_model(&a.checkpoint)?;
    let size = resolve_size(a.size, cfg.as_ref())?;
    let frames = list_frames(&a.frames)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if a.out.canonicalize().ok() == a.frames.canonicalize().ok() {
        return Err(CliError::Usage("--out must differ from --frames".into()));
    }
    let det = Detector::new(&model, size, a.thresholds.conf, a.thresholds.iou);
    let mut lines = String::new();
    let mut summary = DetectSummary {
        frames_total: frames.len(),
        frames_processed: 0,
        detections: 0,
        skipped: Vec::new(),
    };
    for path in &frames {
        let name = frame_name(path);
        let img = match load_image(path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                summary.skipped.push(SkippedFrame {
                    frame: name,
                    error: e.to_string(),
                });
                continue;
            }
        };
        let (dets, _) = det.detect(&img)?;
        let mut shown = img;
        annotate(&mut shown, &dets);
        save_image(&shown, &a.out.join(&name))?;
        for d in &dets {
            lines.push_str(&DetectionRecord::new(&name, d).to_json_line());
            lines.push('\n');
        }
        summary.frames_processed += 1;
        summary.detections += dets.len();
    }
    write(&a.out.join("detections.jsonl"), lines)?;
    write(
        &a.out.join("summary.json"),
        serde_json::to_string_pretty(&summary).context("serializing summary")?,
    )?;
    println!(
        "{} of {} frames processed, {} detections, {} skipped",
        summary.frames_processed,
        summary.frames_total,
        summary.detections,
        summary.skipped.len()
    );
    Ok(())
}
