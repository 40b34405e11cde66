use std::collections::BTreeMap;

use crate::arch::STRIDES;
use crate::postprocess::BBox;

/// One grid cell responsible for a ground-truth box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellTarget {
    pub image: usize,
    /// Row-major cell index within the level grid.
    pub cell: usize,
    /// Index of the box within its image's ground-truth list.
    pub gt_index: usize,
    pub class_id: usize,
    /// Box in network-input pixels.
    pub bbox: BBox,
    /// Distances from the cell center to the box sides, in stride units.
    pub ltrb: [f32; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelTargets {
    pub stride: usize,
    pub grid: usize,
    /// Sorted by `(image, cell)`.
    pub cells: Vec<CellTarget>,
}

/// Positive cells for a batch; every other cell is background.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignedTargets {
    pub batch: usize,
    pub levels: Vec<LevelTargets>,
    /// Boxes dropped because nothing of them remained in the image.
    pub skipped: usize,
}

impl AssignedTargets {
    pub fn num_assigned(&self) -> usize {
        self.levels.iter().map(|l| l.cells.len()).sum()
    }
}

/// Level (0, 1, 2 for strides 8, 16, 32) for a box whose longest side is
/// `max_side` pixels at input size `image_size`. Sides are compared at the
/// 640-pixel scale: below 64 → stride 8, up to 160 → stride 16, else 32.
pub fn level_for(max_side: f32, image_size: usize) -> usize {
    let at640 = max_side as f64 * 640.0 / image_size as f64;
    if at640 < 64.0 {
        0
    } else if at640 <= 160.0 {
        1
    } else {
        2
    }
}

/// Candidate cells of `b` on a level: the cell holding its center, plus the
/// 4-neighbors whose centers fall inside the box.
fn candidates(b: &BBox, stride: usize, grid: usize) -> Vec<usize> {
    let s = stride as f32;
    let (cx, cy) = b.center();
    let col = ((cx / s).floor() as isize).clamp(0, grid as isize - 1);
    let row = ((cy / s).floor() as isize).clamp(0, grid as isize - 1);
    let mut out = vec![row as usize * grid + col as usize];
    for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
        let (r, c) = (row + dr, col + dc);
        if r < 0 || c < 0 || r >= grid as isize || c >= grid as isize {
            continue;
        }
        let (ccx, ccy) = ((c as f32 + 0.5) * s, (r as f32 + 0.5) * s);
        if ccx >= b.x1 && ccx <= b.x2 && ccy >= b.y1 && ccy <= b.y2 {
            out.push(r as usize * grid + c as usize);
        }
    }
    out
}

fn ltrb(b: &BBox, cell: usize, stride: usize, grid: usize) -> [f32; 4] {
    let s = stride as f32;
    let (cx, cy) = (((cell % grid) as f32 + 0.5) * s, ((cell / grid) as f32 + 0.5) * s);
    [(cx - b.x1) / s, (cy - b.y1) / s, (b.x2 - cx) / s, (b.y2 - cy) / s]
}

/// Route each box to a pyramid level by size and claim its candidate cells.
/// A cell wanted by several boxes goes to the smallest (earliest on ties).
/// A box left without cells falls back to its center cell on the other
/// levels, nearest level first, if that cell is free.
///
/// `gts[i]` lists `(class_id, box)` in network-input pixels for image `i`.
pub fn assign_targets(gts: &[Vec<(usize, BBox)>], image_size: usize) -> AssignedTargets {
    let mut skipped = 0;
    // (level, image, cell) -> (area, image-local gt index)
    let mut owner: BTreeMap<(usize, usize, usize), (f64, usize)> = BTreeMap::new();
    let mut boxes: Vec<Vec<Option<(usize, BBox)>>> = Vec::with_capacity(gts.len());
    let size = image_size as f32;
    for (img, list) in gts.iter().enumerate() {
        let mut kept = Vec::with_capacity(list.len());
        for (g, &(class_id, b)) in list.iter().enumerate() {
            let b = b.clamp(size, size);
            if b.width() <= 0.0 || b.height() <= 0.0 {
                log::warn!("image {img}: box {g} lies outside the input after clamping; skipped");
                skipped += 1;
                kept.push(None);
                continue;
            }
            kept.push(Some((class_id, b)));
            let level = level_for(b.width().max(b.height()), image_size);
            let stride = STRIDES[level];
            for cell in candidates(&b, stride, image_size / stride) {
                let area = b.area();
                let slot = owner.entry((level, img, cell)).or_insert((area, g));
                if area < slot.0 {
                    *slot = (area, g);
                }
            }
        }
        boxes.push(kept);
    }
    for (img, list) in boxes.iter().enumerate() {
        for (g, entry) in list.iter().enumerate() {
            let Some((_, b)) = entry else { continue };
            if owner.iter().any(|(&(_, i, _), &(_, o))| i == img && o == g) {
                continue;
            }
            let home = level_for(b.width().max(b.height()), image_size);
            let mut others: Vec<usize> = (0..STRIDES.len()).filter(|&l| l != home).collect();
            others.sort_by_key(|&l| l.abs_diff(home));
            let placed = others.into_iter().find_map(|level| {
                let stride = STRIDES[level];
                let cell = candidates(b, stride, image_size / stride)[0];
                (!owner.contains_key(&(level, img, cell))).then_some((level, cell))
            });
            match placed {
                Some((level, cell)) => {
                    owner.insert((level, img, cell), (b.area(), g));
                }
                None => log::warn!("image {img}: box {g} lost every candidate cell"),
            }
        }
    }
    let mut levels: Vec<LevelTargets> = STRIDES
        .iter()
        .map(|&stride| LevelTargets {
            stride,
            grid: image_size / stride,
            cells: Vec::new(),
        })
        .collect();
    for (&(level, image, cell), &(_, g)) in &owner {
        let (class_id, bbox) = boxes[image][g].expect("owner refers to a kept box");
        let lt = &mut levels[level];
        lt.cells.push(CellTarget {
            image,
            cell,
            gt_index: g,
            class_id,
            bbox,
            ltrb: ltrb(&bbox, cell, lt.stride, lt.grid),
        });
    }
    AssignedTargets {
        batch: gts.len(),
        levels,
        skipped,
    }
}
