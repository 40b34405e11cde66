use std::fmt::Write as _;
use std::path::Path;

use crate::postprocess::BBox;

use super::DataError;

/// One label line: class and a box normalized to image dimensions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelBox {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl LabelBox {
    pub fn from_pixels(class_id: usize, b: &BBox, width: usize, height: usize) -> Self {
        let (iw, ih) = (width as f64, height as f64);
        let [x1, y1, x2, y2] = [b.x1, b.y1, b.x2, b.y2].map(f64::from);
        Self {
            class_id,
            cx: (x1 + x2) * 0.5 / iw,
            cy: (y1 + y2) * 0.5 / ih,
            w: (x2 - x1) / iw,
            h: (y2 - y1) / ih,
        }
    }

    /// Box in pixels, clamped to the image. Each corner is rounded to f32
    /// once, after the arithmetic.
    pub fn to_pixels(&self, width: usize, height: usize) -> BBox {
        let (iw, ih) = (width as f64, height as f64);
        BBox::new(
            ((self.cx - self.w * 0.5) * iw) as f32,
            ((self.cy - self.h * 0.5) * ih) as f32,
            ((self.cx + self.w * 0.5) * iw) as f32,
            ((self.cy + self.h * 0.5) * ih) as f32,
        )
        .clamp(width as f32, height as f32)
    }
}

/// Parse `class cx cy w h` lines. Blank lines are ignored; values outside
/// `[0, 1]` are clamped with a warning.
pub fn parse_label_file(text: &str) -> Result<Vec<LabelBox>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(DataError::Label {
                line: line_no,
                msg: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let class_id = fields[0].parse::<usize>().map_err(|_| DataError::Label {
            line: line_no,
            msg: format!("bad class id `{}`", fields[0]),
        })?;
        let mut v = [0f64; 4];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            let x: f64 = f.parse().map_err(|_| DataError::Label {
                line: line_no,
                msg: format!("bad number `{f}`"),
            })?;
            if !x.is_finite() {
                return Err(DataError::Label {
                    line: line_no,
                    msg: format!("non-finite value `{f}`"),
                });
            }
            if !(0.0..=1.0).contains(&x) {
                log::warn!("label line {line_no}: value {x} clamped to [0, 1]");
            }
            *slot = x.clamp(0.0, 1.0);
        }
        out.push(LabelBox {
            class_id,
            cx: v[0],
            cy: v[1],
            w: v[2],
            h: v[3],
        });
    }
    Ok(out)
}

/// Render pixel boxes as normalized label text.
pub fn write_label_file(boxes: &[(usize, BBox)], width: usize, height: usize) -> String {
    let mut s = String::new();
    for (class_id, b) in boxes {
        let l = LabelBox::from_pixels(*class_id, b, width, height);
        writeln!(s, "{} {} {} {} {}", l.class_id, l.cx, l.cy, l.w, l.h).unwrap();
    }
    s
}

/// Read a label file and convert to pixel boxes of a `width`×`height` image.
pub fn read_labels(path: &Path, width: usize, height: usize) -> Result<Vec<(usize, BBox)>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    Ok(parse_label_file(&text)?
        .iter()
        .map(|l| (l.class_id, l.to_pixels(width, height)))
        .collect())
}
