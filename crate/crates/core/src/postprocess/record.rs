use serde::{Deserialize, Serialize};

use super::{BBox, Detection, PostprocessError};

/// One detection as written to a JSON-lines file, in original-image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: String,
    pub class_id: usize,
    pub confidence: f32,
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl DetectionRecord {
    pub fn new(frame: &str, d: &Detection) -> Self {
        Self {
            frame: frame.to_string(),
            class_id: d.class_id,
            confidence: d.confidence,
            x1: d.bbox.x1,
            y1: d.bbox.y1,
            x2: d.bbox.x2,
            y2: d.bbox.y2,
        }
    }

    pub fn detection(&self) -> Detection {
        Detection {
            bbox: BBox::new(self.x1, self.y1, self.x2, self.y2),
            confidence: self.confidence,
            class_id: self.class_id,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Parse JSON-lines text, skipping blank lines.
pub fn parse_records(text: &str) -> Result<Vec<DetectionRecord>, PostprocessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: DetectionRecord = serde_json::from_str(l).map_err(|e| PostprocessError::Record {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if !(0.0..=1.0).contains(&r.confidence) || !r.detection().bbox.is_valid() {
                return Err(PostprocessError::Record {
                    line: i + 1,
                    msg: "confidence outside [0, 1] or inverted box".into(),
                });
            }
            Ok(r)
        })
        .collect()
}
