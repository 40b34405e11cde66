//! From raw head outputs to final detections: decode, confidence filter,
//! greedy NMS, and letterbox coordinate mapping.

mod decode;
mod letterbox;
mod nms;
mod record;

pub use decode::{decode, decode_batch};
pub use letterbox::{letterbox, letterbox_into, LetterboxMap, PAD_VALUE};
pub use nms::{nms, nms_indices};
pub use record::{parse_records, DetectionRecord};

use serde::{Deserialize, Serialize};

/// Default confidence threshold at inference.
pub const DEFAULT_CONF: f32 = 0.25;
/// Default IoU threshold for NMS and mAP matching.
pub const DEFAULT_IOU: f32 = 0.45;

#[derive(Debug, thiserror::Error)]
pub enum PostprocessError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("threshold {name}={value} outside [0, 1]")]
    Threshold { name: &'static str, value: f32 },
    #[error("invalid letterbox: {0}")]
    Letterbox(String),
    #[error("detection record line {line}: {msg}")]
    Record { line: usize, msg: String },
}

/// Axis-aligned box in pixels of some reference frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f32 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f32 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() as f64 * self.height() as f64
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 <= self.x2 && self.y1 <= self.y2 && [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }

    pub fn clamp(&self, width: f32, height: f32) -> Self {
        Self {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        }
    }

    /// Intersection over union, computed in `f64`. Zero when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x2.min(other.x2) as f64 - self.x1.max(other.x1) as f64).max(0.0);
        let ih = (self.y2.min(other.y2) as f64 - self.y1.max(other.y1) as f64).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    /// Whether `other` lies strictly inside this box on all four sides.
    pub fn strictly_contains(&self, other: &BBox) -> bool {
        other.x1 > self.x1 && other.y1 > self.y1 && other.x2 < self.x2 && other.y2 < self.y2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f32,
    pub class_id: usize,
}

/// Reject thresholds outside `[0, 1]`.
pub fn check_threshold(name: &'static str, value: f32) -> Result<(), PostprocessError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(PostprocessError::Threshold { name, value })
    }
}
