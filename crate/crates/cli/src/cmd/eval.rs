use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use lumendet::data::{load_image, read_labels, Manifest};
use lumendet::infer::{evaluate, load_prepared, Detector};
use lumendet::metrics::{export_pr_curve, map_range, Annotation, EvalReport, ImageEval};
use lumendet::postprocess::{check_threshold, parse_records, Detection};
use serde::{Deserialize, Serialize};

use super::{frame_name, load_model, require, resolve_size, write};
use crate::{CliError, EvalArgs};

pub const TABLE_HEADER: &str = "Model\tDataset\tPrecision\tmAP@0.5\tmAP@0.5:0.95";

/// Everything `eval` writes to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub model: String,
    pub dataset: String,
    /// Network input size; absent when scoring a predictions file.
    pub input_size: Option<usize>,
    pub conf: f32,
    pub iou: f32,
    pub report: EvalReport,
}

impl EvalOutput {
    /// Tab-separated row under [`TABLE_HEADER`], three decimals.
    pub fn row(&self) -> String {
        format!(
            "{}\t{}\t{:.3}\t{:.3}\t{:.3}",
            self.model, self.dataset, self.report.precision_best_f1, self.report.map50, self.report.map5095
        )
    }
}

/// Score detections read from JSON lines. Records are matched to manifest
/// samples by image file name and used as-is, without thresholding.
fn score_predictions(manifest: &Manifest, path: &Path) -> Result<EvalReport, CliError> {
    require(path, "predictions file")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut by_frame: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for r in parse_records(&text)? {
        by_frame.entry(r.frame.clone()).or_default().push(r.detection());
    }
    let mut images = Vec::with_capacity(manifest.len());
    for (i, s) in manifest.samples.iter().enumerate() {
        let img = load_image(&s.image)?;
        let gts = read_labels(&s.label, img.width, img.height)?
            .into_iter()
            .map(|(class_id, bbox)| Annotation {
                image_id: i,
                bbox,
                class_id,
            })
            .collect();
        let preds = by_frame.remove(&frame_name(&s.image)).unwrap_or_default();
        images.push(ImageEval::new(i, (img.width, img.height), gts, preds));
    }
    for frame in by_frame.keys() {
        log::warn!("predictions for `{frame}` match no manifest sample");
    }
    Ok(map_range(&images)?)
}

pub fn run(a: &EvalArgs) -> Result<EvalOutput, CliError> {
    check_threshold("conf", a.thresholds.conf)?;
    check_threshold("iou", a.thresholds.iou)?;
    require(&a.manifest, "manifest")?;
    let manifest = Manifest::load(&a.manifest)?;
    if manifest.is_empty() {
        return Err(anyhow::anyhow!("manifest {} lists no samples", a.manifest.display()).into());
    }
    let dataset = a
        .manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (model_name, input_size, report) = match (&a.predictions, &a.checkpoint) {
        (Some(p), _) => ("predictions".to_string(), None, score_predictions(&manifest, p)?),
        (None, Some(ck)) => {
            let (model, cfg) = load_model(ck)?;
            let size = resolve_size(a.size, cfg.as_ref())?;
            let data = load_prepared(&manifest, size, size)?;
            let det = Detector::new(&model, size, a.thresholds.conf, a.thresholds.iou);
            let report = evaluate(&det, &data, 16)?;
            (model.config().variant().name().to_string(), Some(size), report)
        }
        (None, None) => return Err(CliError::Usage("either --checkpoint or --predictions is required".into())),
    };
    let out = EvalOutput {
        model: a.name.clone().unwrap_or(model_name),
        dataset,
        input_size,
        conf: a.thresholds.conf,
        iou: a.thresholds.iou,
        report,
    };
    write(
        &a.out.join("report.json"),
        serde_json::to_string_pretty(&out).context("serializing report")?,
    )?;
    export_pr_curve(&out.report, &a.out.join("pr.csv"))?;
    for flag in &out.report.flags {
        log::warn!("{flag}");
    }
    println!("{TABLE_HEADER}");
    println!("{}", out.row());
    Ok(out)
}
