use serde::{Deserialize, Serialize};

use crate::arch::MAX_STRIDE;
use crate::data::Image;

use super::{BBox, Detection, PostprocessError};

/// Gray used for letterbox padding.
pub const PAD_VALUE: f32 = 114.0 / 255.0;

/// Mapping between original-image pixels and letterboxed network input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LetterboxMap {
    pub scale: f32,
    pub pad_x: f32,
    pub pad_y: f32,
    pub orig_width: usize,
    pub orig_height: usize,
    /// Side of the square canvas fed to the network.
    pub canvas: usize,
}

impl LetterboxMap {
    pub fn to_network(&self, b: &BBox) -> BBox {
        BBox::new(
            b.x1 * self.scale + self.pad_x,
            b.y1 * self.scale + self.pad_y,
            b.x2 * self.scale + self.pad_x,
            b.y2 * self.scale + self.pad_y,
        )
    }

    /// Inverse of [`Self::to_network`], without clamping.
    pub fn to_original(&self, b: &BBox) -> BBox {
        BBox::new(
            (b.x1 - self.pad_x) / self.scale,
            (b.y1 - self.pad_y) / self.scale,
            (b.x2 - self.pad_x) / self.scale,
            (b.y2 - self.pad_y) / self.scale,
        )
    }

    /// Map a detection back into the original frame, clamped to its bounds.
    pub fn unletterbox(&self, d: &Detection) -> Detection {
        Detection {
            bbox: self
                .to_original(&d.bbox)
                .clamp(self.orig_width as f32, self.orig_height as f32),
            ..*d
        }
    }
}

/// Aspect-preserving resize so the image fits a `target` square, centered
/// and padded with [`PAD_VALUE`].
pub fn letterbox(image: &Image, target: usize) -> Result<(Image, LetterboxMap), PostprocessError> {
    letterbox_into(image, target, target)
}

/// Like [`letterbox`], but the content is scaled to fit `content` pixels
/// and centered on a larger `canvas`. Lets sizes that are not a multiple of
/// the network stride be evaluated on the next valid canvas.
pub fn letterbox_into(
    image: &Image,
    content: usize,
    canvas: usize,
) -> Result<(Image, LetterboxMap), PostprocessError> {
    if image.width == 0 || image.height == 0 {
        return Err(PostprocessError::Letterbox("zero-sized image".into()));
    }
    if canvas == 0 || canvas % MAX_STRIDE != 0 {
        return Err(PostprocessError::Letterbox(format!(
            "canvas {canvas} is not a positive multiple of {MAX_STRIDE}"
        )));
    }
    if content == 0 || content > canvas {
        return Err(PostprocessError::Letterbox(format!(
            "content size {content} must be in 1..={canvas}"
        )));
    }
    let scale = (content as f32 / image.width as f32).min(content as f32 / image.height as f32);
    let cw = ((image.width as f32 * scale).round() as usize).clamp(1, content);
    let ch = ((image.height as f32 * scale).round() as usize).clamp(1, content);
    let px = (canvas - cw) / 2;
    let py = (canvas - ch) / 2;
    let resized = image.resize_bilinear(cw, ch);
    let mut out = Image::filled(canvas, canvas, [PAD_VALUE; 3]);
    for c in 0..3 {
        for y in 0..ch {
            for x in 0..cw {
                out.set(c, y + py, x + px, resized.get(c, y, x));
            }
        }
    }
    Ok((
        out,
        LetterboxMap {
            scale,
            pad_x: px as f32,
            pad_y: py as f32,
            orig_width: image.width,
            orig_height: image.height,
            canvas,
        },
    ))
}
