use std::time::{Duration, Instant};

use anyhow::Context;
use lumendet::data::load_image;
use lumendet::infer::Detector;
use serde::{Deserialize, Serialize};

use super::{frame_name, list_frames, load_model, resolve_size, write};
use crate::{BenchArgs, CliError};

/// Fewer frames than this make the timing too noisy to quote.
pub const MIN_STABLE_FRAMES: usize = 30;

/// Mean per-frame latency of each pipeline stage in milliseconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    /// Reading and decoding the frame file.
    pub load: f64,
    pub preprocess: f64,
    pub forward: f64,
    pub postprocess: f64,
}

impl StageLatency {
    pub fn sum(&self) -> f64 {
        self.load + self.preprocess + self.forward + self.postprocess
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames_processed: usize,
    pub wall_time_s: f64,
    /// `frames_processed / wall_time_s`.
    pub fps: f64,
    /// `wall_time_s` per frame, in milliseconds.
    pub frame_latency_ms: f64,
    pub stage_latency_ms: StageLatency,
    pub input_size: usize,
    /// Set when fewer than [`MIN_STABLE_FRAMES`] frames were timed.
    pub unstable: bool,
}

impl BenchReport {
    pub fn new(frames: usize, wall: Duration, stages: [Duration; 4], input_size: usize) -> Self {
        let wall_time_s = wall.as_secs_f64();
        let per = |d: Duration| d.as_secs_f64() * 1e3 / frames as f64;
        Self {
            frames_processed: frames,
            wall_time_s,
            fps: frames as f64 / wall_time_s,
            frame_latency_ms: per(wall),
            stage_latency_ms: StageLatency {
                load: per(stages[0]),
                preprocess: per(stages[1]),
                forward: per(stages[2]),
                postprocess: per(stages[3]),
            },
            input_size,
            unstable: frames < MIN_STABLE_FRAMES,
        }
    }
}

/// Sequential batch-1 loop: load, letterbox, forward, decode + NMS, one
/// frame at a time. The wall clock covers the whole loop.
pub fn run(a: &BenchArgs) -> Result<BenchReport, CliError> {
    let (model, cfg) = load_model(&a.checkpoint)?;
    let size = resolve_size(a.size, cfg.as_ref())?;
    let frames = list_frames(&a.frames)?;
    let det = Detector::new(&model, size, a.thresholds.conf, a.thresholds.iou);
    let mut stages = [Duration::ZERO; 4];
    let mut processed = 0;
    let start = Instant::now();
    for path in &frames {
        let t = Instant::now();
        let img = match load_image(path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", frame_name(path));
                continue;
            }
        };
        stages[0] += t.elapsed();
        let (_, times) = det.detect(&img)?;
        stages[1] += times.preprocess;
        stages[2] += times.forward;
        stages[3] += times.postprocess;
        processed += 1;
    }
    let wall = start.elapsed();
    if processed == 0 {
        return Err(anyhow::anyhow!("no readable frames in {}", a.frames.display()).into());
    }
    let report = BenchReport::new(processed, wall, stages, size);
    if report.unstable {
        log::warn!("only {processed} frames timed; at least {MIN_STABLE_FRAMES} are needed for a stable figure");
    }
    let json = serde_json::to_string_pretty(&report).context("serializing bench report")?;
    if let Some(out) = &a.out {
        write(out, &json)?;
    }
    println!("{json}");
    Ok(report)
}
