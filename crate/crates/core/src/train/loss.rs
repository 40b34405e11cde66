use std::f32::consts::PI;

use crate::arch::HeadOutput;
use crate::tensor::{Tape, Tensor, TensorError, Var};

use super::{AssignedTargets, LossWeights};

const EPS: f32 = 1e-7;

/// Scalar loss terms of one step, unweighted.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f32,
    pub box_: f32,
    pub obj: f32,
    pub cls: f32,
}

/// Complete IoU of predicted boxes against constant ground truth, each
/// given as `[x1, y1, x2, y2]` vars of equal shape. Returns elementwise CIoU.
pub fn ciou(tape: &mut Tape, p: [Var; 4], g: [Var; 4]) -> Result<Var, TensorError> {
    let [px1, py1, px2, py2] = p;
    let [gx1, gy1, gx2, gy2] = g;
    let pw = tape.sub(px2, px1)?;
    let ph = tape.sub(py2, py1)?;
    let gw = tape.sub(gx2, gx1)?;
    let gh = tape.sub(gy2, gy1)?;

    let ix1 = tape.maximum(px1, gx1)?;
    let ix2 = tape.minimum(px2, gx2)?;
    let iw = tape.sub(ix2, ix1)?;
    let iw = tape.clamp_min(iw, 0.0);
    let iy1 = tape.maximum(py1, gy1)?;
    let iy2 = tape.minimum(py2, gy2)?;
    let ih = tape.sub(iy2, iy1)?;
    let ih = tape.clamp_min(ih, 0.0);
    let inter = tape.mul(iw, ih)?;
    let pa = tape.mul(pw, ph)?;
    let ga = tape.mul(gw, gh)?;
    let union = tape.add(pa, ga)?;
    let union = tape.sub(union, inter)?;
    let union = tape.add_scalar(union, EPS);
    let iou = tape.div(inter, union)?;

    let ex1 = tape.minimum(px1, gx1)?;
    let ex2 = tape.maximum(px2, gx2)?;
    let ey1 = tape.minimum(py1, gy1)?;
    let ey2 = tape.maximum(py2, gy2)?;
    let ew = tape.sub(ex2, ex1)?;
    let eh = tape.sub(ey2, ey1)?;
    let ew2 = tape.mul(ew, ew)?;
    let eh2 = tape.mul(eh, eh)?;
    let diag = tape.add(ew2, eh2)?;
    let diag = tape.add_scalar(diag, EPS);

    // squared center distance; centers doubled so (2·dx)² / 4
    let psx = tape.add(px1, px2)?;
    let gsx = tape.add(gx1, gx2)?;
    let dx = tape.sub(psx, gsx)?;
    let psy = tape.add(py1, py2)?;
    let gsy = tape.add(gy1, gy2)?;
    let dy = tape.sub(psy, gsy)?;
    let dx2 = tape.mul(dx, dx)?;
    let dy2 = tape.mul(dy, dy)?;
    let rho = tape.add(dx2, dy2)?;
    let rho = tape.mul_scalar(rho, 0.25);
    let dist = tape.div(rho, diag)?;

    let gh_eps = tape.add_scalar(gh, EPS);
    let ph_eps = tape.add_scalar(ph, EPS);
    let gr = tape.div(gw, gh_eps)?;
    let pr = tape.div(pw, ph_eps)?;
    let ga = tape.atan(gr);
    let pa = tape.atan(pr);
    let da = tape.sub(ga, pa)?;
    let da2 = tape.mul(da, da)?;
    let v = tape.mul_scalar(da2, 4.0 / (PI * PI));

    let one_minus = tape.mul_scalar(iou, -1.0);
    let one_minus = tape.add_scalar(one_minus, 1.0 + EPS);
    let denom = tape.add(one_minus, v)?;
    let alpha = tape.div(v, denom)?;
    let av = tape.mul(alpha, v)?;

    let out = tape.sub(iou, dist)?;
    tape.sub(out, av)
}

/// Flat indices of `(image, channel, cell)` entries of a `[n, c, hw]` tensor,
/// laid out channel-major over the assigned cells.
fn cell_indices(cells: &[(usize, usize)], channels: usize, hw: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(channels * cells.len());
    for ch in 0..channels {
        for &(image, cell) in cells {
            idx.push((image * channels + ch) * hw + cell);
        }
    }
    idx
}

/// Weighted sum of the box, objectness and classification terms.
///
/// * box: mean over assigned cells of `1 - CIoU(decoded, target)`;
/// * objectness: BCE over every cell of every level, target 1 on assigned cells;
/// * classification: BCE over assigned cells and classes.
///
/// With no assigned cells the box and class terms are constant zero.
pub fn compute_loss(
    tape: &mut Tape,
    out: &HeadOutput,
    targets: &AssignedTargets,
    weights: LossWeights,
) -> Result<(Var, LossBreakdown), TensorError> {
    let nc = tape.shape(out.levels[0].cls)[1];
    let mut obj_terms = Vec::new();
    let mut total_cells = 0usize;
    let mut box_parts = Vec::new();
    let mut cls_parts = Vec::new();
    let mut cls_target = Vec::new();
    let mut centers: [Vec<f32>; 2] = Default::default();
    let mut strides = Vec::new();
    let mut gt: [Vec<f32>; 4] = Default::default();
    for (level, lt) in out.levels.iter().zip(&targets.levels) {
        let shape = tape.shape(level.obj).to_vec();
        let (n, hw) = (shape[0], shape[2] * shape[3]);
        if n != targets.batch || shape[2] != lt.grid || shape[3] != lt.grid {
            return Err(TensorError::Invalid {
                op: "compute_loss",
                msg: format!(
                    "targets for batch {} on a {}x{} grid do not match output {:?}",
                    targets.batch, lt.grid, lt.grid, shape
                ),
            });
        }
        let mut obj_t = vec![0.0f32; n * hw];
        for c in &lt.cells {
            obj_t[c.image * hw + c.cell] = 1.0;
        }
        obj_terms.push(tape.bce_with_logits_sum(level.obj, obj_t)?);
        total_cells += n * hw;
        if lt.cells.is_empty() {
            continue;
        }
        let cells: Vec<(usize, usize)> = lt.cells.iter().map(|c| (c.image, c.cell)).collect();
        let a = cells.len();
        box_parts.push(tape.gather(level.boxes, cell_indices(&cells, 4, hw), &[4, a])?);
        cls_parts.push(tape.gather(level.cls, cell_indices(&cells, nc, hw), &[nc, a])?);
        let mut onehot = vec![0.0f32; nc * a];
        for (j, c) in lt.cells.iter().enumerate() {
            onehot[c.class_id.min(nc - 1) * a + j] = 1.0;
        }
        cls_target.push(onehot);
        let s = lt.stride as f32;
        for c in &lt.cells {
            centers[0].push(((c.cell % lt.grid) as f32 + 0.5) * s);
            centers[1].push(((c.cell / lt.grid) as f32 + 0.5) * s);
            strides.push(s);
            for (k, v) in [c.bbox.x1, c.bbox.y1, c.bbox.x2, c.bbox.y2].into_iter().enumerate() {
                gt[k].push(v);
            }
        }
    }
    let mut obj = obj_terms[0];
    for &t in &obj_terms[1..] {
        obj = tape.add(obj, t)?;
    }
    let obj = tape.mul_scalar(obj, 1.0 / total_cells as f32);

    let a = strides.len();
    let (box_term, cls_term) = if a == 0 {
        let z1 = tape.leaf(Tensor::scalar(0.0));
        let z2 = tape.leaf(Tensor::scalar(0.0));
        (z1, z2)
    } else {
        let raw = tape.concat(&box_parts, 1)?;
        let dist = tape.softplus(raw);
        let stride = tape.leaf(Tensor::new(vec![1, a], strides.clone())?);
        let mut sides = [dist; 4];
        for (k, side) in sides.iter_mut().enumerate() {
            let row = tape.slice(dist, 0, k, 1)?;
            *side = tape.mul(row, stride)?;
        }
        let cx = tape.leaf(Tensor::new(vec![1, a], centers[0].clone())?);
        let cy = tape.leaf(Tensor::new(vec![1, a], centers[1].clone())?);
        let p = [
            tape.sub(cx, sides[0])?,
            tape.sub(cy, sides[1])?,
            tape.add(cx, sides[2])?,
            tape.add(cy, sides[3])?,
        ];
        let g = gt.clone().map(|v| tape.leaf(Tensor::new(vec![1, a], v).expect("matching length")));
        let c = ciou(tape, p, g)?;
        let m = tape.mean(c);
        let box_term = tape.mul_scalar(m, -1.0);
        let box_term = tape.add_scalar(box_term, 1.0);

        let logits = tape.concat(&cls_parts, 1)?;
        let mut target = vec![0.0f32; nc * a];
        let mut offset = 0;
        for part in &cls_target {
            let la = part.len() / nc;
            for ch in 0..nc {
                target[ch * a + offset..ch * a + offset + la].copy_from_slice(&part[ch * la..(ch + 1) * la]);
            }
            offset += la;
        }
        let cls_sum = tape.bce_with_logits_sum(logits, target)?;
        (box_term, tape.mul_scalar(cls_sum, 1.0 / (a * nc) as f32))
    };
    let wb = tape.mul_scalar(box_term, weights.box_);
    let wo = tape.mul_scalar(obj, weights.obj);
    let wc = tape.mul_scalar(cls_term, weights.cls);
    let total = tape.add(wb, wo)?;
    let total = tape.add(total, wc)?;
    let breakdown = LossBreakdown {
        total: tape.value(total).data()[0],
        box_: tape.value(box_term).data()[0],
        obj: tape.value(obj).data()[0],
        cls: tape.value(cls_term).data()[0],
    };
    Ok((total, breakdown))
}
