//! Box and text overlays drawn straight into an [`Image`].
//!
//! Every drawing call returns the rectangles it touched so callers can check
//! that nothing else changed.

use lumendet::data::Image;
use lumendet::postprocess::Detection;

pub const BOX_COLOR: [f32; 3] = [0.0, 1.0, 0.0];
const TEXT_FG: [f32; 3] = [1.0, 1.0, 1.0];
const TEXT_BG: [f32; 3] = [0.0, 0.0, 0.0];
const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;
const BANNER_H: usize = GLYPH_H + 2;

/// Inclusive-exclusive pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// 3×5 glyph rows, most significant of the low three bits is the left column.
fn glyph(c: char) -> [u8; GLYPH_H] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        _ => [0; GLYPH_H],
    }
}

/// Width in pixels of `text` plus its one-pixel margin.
fn text_width(text: &str) -> usize {
    text.chars().count() * (GLYPH_W + 1) + 1
}

/// White text on a black plate with its top-left corner at `(x, y)`,
/// clipped to the image.
pub fn draw_text(img: &mut Image, x: usize, y: usize, text: &str) -> Option<Region> {
    let r = Region {
        x0: x.min(img.width),
        y0: y.min(img.height),
        x1: (x + text_width(text)).min(img.width),
        y1: (y + BANNER_H).min(img.height),
    };
    if r.x0 >= r.x1 || r.y0 >= r.y1 {
        return None;
    }
    for py in r.y0..r.y1 {
        for px in r.x0..r.x1 {
            img.set_pixel(py, px, TEXT_BG);
        }
    }
    for (i, c) in text.chars().enumerate() {
        let gx = x + 1 + i * (GLYPH_W + 1);
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_W {
                let (px, py) = (gx + col, y + 1 + row);
                if bits >> (GLYPH_W - 1 - col) & 1 == 1 && r.contains(px, py) {
                    img.set_pixel(py, px, TEXT_FG);
                }
            }
        }
    }
    Some(r)
}

/// One-pixel outline of a detection box, rounded to whole pixels and
/// clipped. Returns the four edge strips.
pub fn draw_box(img: &mut Image, d: &Detection) -> Vec<Region> {
    if img.width == 0 || img.height == 0 {
        return Vec::new();
    }
    let clip = |v: f32, hi: usize| (v.round().max(0.0) as usize).min(hi - 1);
    let (x0, x1) = (clip(d.bbox.x1, img.width), clip(d.bbox.x2, img.width));
    let (y0, y1) = (clip(d.bbox.y1, img.height), clip(d.bbox.y2, img.height));
    let edges = [
        Region { x0, y0, x1: x1 + 1, y1: y0 + 1 },
        Region { x0, y0: y1, x1: x1 + 1, y1: y1 + 1 },
        Region { x0, y0, x1: x0 + 1, y1: y1 + 1 },
        Region { x0: x1, y0, x1: x1 + 1, y1: y1 + 1 },
    ];
    for e in &edges {
        for y in e.y0..e.y1 {
            for x in e.x0..e.x1 {
                img.set_pixel(y, x, BOX_COLOR);
            }
        }
    }
    edges.to_vec()
}

/// Draw every detection with its confidence, then a status banner in the
/// top-left corner reading `DET <count>`.
pub fn annotate(img: &mut Image, dets: &[Detection]) -> Vec<Region> {
    let mut regions = Vec::new();
    for d in dets {
        regions.extend(draw_box(img, d));
        let label = format!("{:.2}", d.confidence);
        let x = d.bbox.x1.round().max(0.0) as usize;
        let y = (d.bbox.y1.round() as isize - BANNER_H as isize).max(0) as usize;
        regions.extend(draw_text(img, x, y, &label));
    }
    regions.extend(draw_text(img, 0, 0, &format!("DET {}", dets.len())));
    regions
}

#[cfg(test)]
mod tests {
    use super::*;
    use lumendet::postprocess::BBox;

    #[test]
    fn only_marked_regions_change() {
        let base = Image::filled(64, 48, [0.3, 0.4, 0.5]);
        let mut img = base.clone();
        let dets = [Detection {
            bbox: BBox::new(10.2, 20.0, 40.0, 47.9),
            confidence: 0.87,
            class_id: 0,
        }];
        let regions = annotate(&mut img, &dets);
        let mut changed = 0;
        for y in 0..img.height {
            for x in 0..img.width {
                let same = img.pixel(y, x) == base.pixel(y, x);
                if !regions.iter().any(|r| r.contains(x, y)) {
                    assert!(same, "pixel ({x}, {y}) changed outside overlay");
                }
                changed += usize::from(!same);
            }
        }
        assert!(changed > 0);
        assert_eq!(img.pixel(20, 25), BOX_COLOR);
        assert_eq!(img.pixel(47, 25), BOX_COLOR);
    }

    #[test]
    fn empty_frame_gets_only_banner() {
        let mut img = Image::filled(32, 32, [0.5; 3]);
        let regions = annotate(&mut img, &[]);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0], Region { x0: 0, y0: 0, x1: text_width("DET 0"), y1: BANNER_H });
    }

    #[test]
    fn text_clips_at_border() {
        let mut img = Image::filled(8, 4, [0.5; 3]);
        let r = draw_text(&mut img, 6, 2, "0.99").unwrap();
        assert_eq!(r, Region { x0: 6, y0: 2, x1: 8, y1: 4 });
        assert!(draw_text(&mut img, 9, 0, "1").is_none());
    }
}
