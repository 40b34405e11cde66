//! Independent ellipse rasterization: test every pixel center of the frame
//! against the ellipse's quadratic form and take the bounding box of hits.

use lumendet::data::Ellipse;
use lumendet::postprocess::BBox;

/// Bounding box of the covered pixel centers and how many there are.
pub fn raster_reference(e: &Ellipse, width: usize, height: usize) -> Option<(BBox, usize)> {
    // x̂ᵀ M x̂ < 1 with M = R·diag(1/a², 1/b²)·Rᵀ
    let (s, c) = e.theta.sin_cos();
    let (ia, ib) = (1.0 / (e.a * e.a), 1.0 / (e.b * e.b));
    let m11 = c * c * ia + s * s * ib;
    let m22 = s * s * ia + c * c * ib;
    let m12 = c * s * (ia - ib);
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    let mut hits = 0;
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 + 0.5 - e.cx;
            let dy = y as f64 + 0.5 - e.cy;
            if m11 * dx * dx + 2.0 * m12 * dx * dy + m22 * dy * dy < 1.0 {
                hits += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    (hits > 0).then(|| (BBox::new(x0 as f32, y0 as f32, x1 as f32, y1 as f32), hits))
}
