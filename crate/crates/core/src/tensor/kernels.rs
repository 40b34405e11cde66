//! Raw forward/backward kernels on contiguous f32 buffers.
//!
//! Shapes are validated by the tape before these are called. Batch-level
//! loops go through [`crate::exec`] and partial sums are combined in index
//! order, so output is independent of scheduling.

use crate::exec::map_indexed;

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c[m×n] = alpha·a[m×k]·b[k×n] + beta·c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + (k.max(1) - 1) * csa + 1);
    debug_assert!(b.len() >= (k.max(1) - 1) * rsb + (n - 1) * csb + 1);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut col = vec![0.0f32; g.col_rows() * oh * ow];
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution; `x` is NCHW, `w` is OIHW.
pub fn conv2d_forward(x: &[f32], w: &[f32], bias: Option<&[f32]>, g: &ConvGeom) -> Vec<f32> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane_in = g.c * g.h * g.w;
    let plane_out = g.o * oh * ow;
    let k = g.col_rows();
    let per_image = map_indexed(g.n, |ni| {
        let xi = &x[ni * plane_in..(ni + 1) * plane_in];
        let mut out = vec![0.0f32; plane_out];
        if let Some(b) = bias {
            for (o, chunk) in out.chunks_mut(oh * ow).enumerate() {
                chunk.fill(b[o]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        if g.is_pointwise() {
            gemm(g.o, k, oh * ow, w, (k, 1), xi, (oh * ow, 1), beta, &mut out);
        } else {
            let col = im2col(xi, g);
            gemm(g.o, k, oh * ow, w, (k, 1), &col, (oh * ow, 1), beta, &mut out);
        }
        out
    });
    per_image.concat()
}

/// Gradients of a convolution. `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane_in = g.c * g.h * g.w;
    let plane_out = g.o * oh * ow;
    let k = g.col_rows();
    let hw = oh * ow;
    let parts = map_indexed(g.n, |ni| {
        let xi = &x[ni * plane_in..(ni + 1) * plane_in];
        let dyi = &dy[ni * plane_out..(ni + 1) * plane_out];
        let owned_col;
        let col: &[f32] = if g.is_pointwise() {
            xi
        } else {
            owned_col = im2col(xi, g);
            &owned_col
        };
        // dW = dY · colᵀ
        let mut dw = vec![0.0f32; g.o * k];
        gemm(g.o, hw, k, dyi, (hw, 1), col, (1, hw), 0.0, &mut dw);
        let db: Vec<f32> = dyi
            .chunks(hw)
            .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() as f32)
            .collect();
        let dx = need_dx.then(|| {
            // dcol = Wᵀ · dY
            let mut dcol = vec![0.0f32; k * hw];
            gemm(k, g.o, hw, w, (1, k), dyi, (hw, 1), 0.0, &mut dcol);
            if g.is_pointwise() {
                dcol
            } else {
                let mut dxi = vec![0.0f32; plane_in];
                col2im(&dcol, g, &mut dxi);
                dxi
            }
        });
        (dx, dw, db)
    });
    let mut dw = vec![0.0f32; g.o * k];
    let mut db = vec![0.0f32; g.o];
    let mut dx = need_dx.then(|| Vec::with_capacity(g.n * plane_in));
    for (dxi, dwi, dbi) in parts {
        dw.iter_mut().zip(&dwi).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&dbi).for_each(|(a, b)| *a += b);
        if let (Some(acc), Some(part)) = (dx.as_mut(), dxi) {
            acc.extend_from_slice(&part);
        }
    }
    (dx, dw, db)
}

/// Per-channel statistics and normalized output of batch normalization.
pub struct BnForward {
    pub out: Vec<f32>,
    pub mean: Vec<f32>,
    /// Biased batch variance.
    pub var: Vec<f32>,
    pub invstd: Vec<f32>,
}

/// Batch-normalize NCHW input with the given per-channel mean/variance, or
/// with batch statistics when `stats` is `None`.
pub fn batchnorm_forward(
    x: &[f32],
    [n, c, h, w]: [usize; 4],
    gamma: &[f32],
    beta: &[f32],
    stats: Option<(&[f32], &[f32])>,
    eps: f32,
) -> BnForward {
    let hw = h * w;
    let m = (n * hw) as f64;
    let per_channel: Vec<(f32, f32)> = map_indexed(c, |ci| {
        if let Some((rm, rv)) = stats {
            return (rm[ci], rv[ci]);
        }
        let mut s = 0.0f64;
        for ni in 0..n {
            let off = (ni * c + ci) * hw;
            s += x[off..off + hw].iter().map(|&v| v as f64).sum::<f64>();
        }
        let mean = s / m;
        let mut ss = 0.0f64;
        for ni in 0..n {
            let off = (ni * c + ci) * hw;
            ss += x[off..off + hw]
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>();
        }
        (mean as f32, (ss / m) as f32)
    });
    let mean: Vec<f32> = per_channel.iter().map(|p| p.0).collect();
    let var: Vec<f32> = per_channel.iter().map(|p| p.1).collect();
    let invstd: Vec<f32> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = vec![0.0f32; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let off = (ni * c + ci) * hw;
            let (mu, is, g, b) = (mean[ci], invstd[ci], gamma[ci], beta[ci]);
            for (o, &v) in out[off..off + hw].iter_mut().zip(&x[off..off + hw]) {
                *o = (v - mu) * is * g + b;
            }
        }
    }
    BnForward {
        out,
        mean,
        var,
        invstd,
    }
}

/// Returns `(dx, dgamma, dbeta)`. With `batch_stats` the mean/variance are
/// treated as functions of `x`; otherwise they are constants.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward(
    x: &[f32],
    dy: &[f32],
    [n, c, h, w]: [usize; 4],
    gamma: &[f32],
    mean: &[f32],
    invstd: &[f32],
    batch_stats: bool,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let hw = h * w;
    let m = (n * hw) as f64;
    let sums: Vec<(f64, f64)> = map_indexed(c, |ci| {
        let (mut sdy, mut sdyx) = (0.0f64, 0.0f64);
        for ni in 0..n {
            let off = (ni * c + ci) * hw;
            for (&g, &v) in dy[off..off + hw].iter().zip(&x[off..off + hw]) {
                let xhat = ((v - mean[ci]) * invstd[ci]) as f64;
                sdy += g as f64;
                sdyx += g as f64 * xhat;
            }
        }
        (sdy, sdyx)
    });
    let dbeta: Vec<f32> = sums.iter().map(|s| s.0 as f32).collect();
    let dgamma: Vec<f32> = sums.iter().map(|s| s.1 as f32).collect();
    let mut dx = vec![0.0f32; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let off = (ni * c + ci) * hw;
            let k = gamma[ci] * invstd[ci];
            let (mdy, mdyx) = ((sums[ci].0 / m) as f32, (sums[ci].1 / m) as f32);
            for ((d, &g), &v) in dx[off..off + hw]
                .iter_mut()
                .zip(&dy[off..off + hw])
                .zip(&x[off..off + hw])
            {
                *d = if batch_stats {
                    let xhat = (v - mean[ci]) * invstd[ci];
                    k * (g - mdy - xhat * mdyx)
                } else {
                    k * g
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Split a shape around `axis` into `(outer, axis_len, inner)`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_forward(x: &[f32], (outer, d, inner): (usize, usize, usize)) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * d + j) * inner + i;
            let max = (0..d).map(|j| x[idx(j)]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for j in 0..d {
                let e = (x[idx(j)] - max).exp();
                out[idx(j)] = e;
                sum += e as f64;
            }
            let inv = (1.0 / sum) as f32;
            for j in 0..d {
                out[idx(j)] *= inv;
            }
        }
    }
    out
}

pub fn softmax_backward(y: &[f32], dy: &[f32], (outer, d, inner): (usize, usize, usize)) -> Vec<f32> {
    let mut dx = vec![0.0f32; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * d + j) * inner + i;
            let dot: f64 = (0..d).map(|j| (y[idx(j)] * dy[idx(j)]) as f64).sum();
            for j in 0..d {
                dx[idx(j)] = y[idx(j)] * (dy[idx(j)] - dot as f32);
            }
        }
    }
    dx
}

/// Multi-head scaled dot-product attention on `[b, t, d]` inputs. Returns the
/// output and the attention probabilities `[b, heads, t, t]`.
pub fn attention_forward(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    (b, t, d): (usize, usize, usize),
    heads: usize,
) -> (Vec<f32>, Vec<f32>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let parts = map_indexed(b * heads, |bh| {
        let (bi, hi) = (bh / heads, bh % heads);
        let base = bi * t * d + hi * dh;
        let mut scores = vec![0.0f32; t * t];
        // S = Q·Kᵀ
        gemm(t, dh, t, &q[base..], (d, 1), &k[base..], (1, d), 0.0, &mut scores);
        scores.iter_mut().for_each(|s| *s *= scale);
        let probs = softmax_forward(&scores, (t, t, 1));
        let mut out = vec![0.0f32; t * dh];
        gemm(t, t, dh, &probs, (t, 1), &v[base..], (d, 1), 0.0, &mut out);
        (out, probs)
    });
    let mut out = vec![0.0f32; b * t * d];
    let mut probs = Vec::with_capacity(b * heads * t * t);
    for (bh, (o, p)) in parts.into_iter().enumerate() {
        let (bi, hi) = (bh / heads, bh % heads);
        for ti in 0..t {
            let dst = bi * t * d + ti * d + hi * dh;
            out[dst..dst + dh].copy_from_slice(&o[ti * dh..(ti + 1) * dh]);
        }
        probs.extend_from_slice(&p);
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
pub fn attention_backward(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    probs: &[f32],
    dy: &[f32],
    (b, t, d): (usize, usize, usize),
    heads: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let parts = map_indexed(b * heads, |bh| {
        let bi = bh / heads;
        let hi = bh % heads;
        let base = bi * t * d + hi * dh;
        let p = &probs[bh * t * t..(bh + 1) * t * t];
        // dV = Pᵀ·dY
        let mut dv = vec![0.0f32; t * dh];
        gemm(t, t, dh, p, (1, t), &dy[base..], (d, 1), 0.0, &mut dv);
        // dP = dY·Vᵀ
        let mut dp = vec![0.0f32; t * t];
        gemm(t, dh, t, &dy[base..], (d, 1), &v[base..], (1, d), 0.0, &mut dp);
        let mut ds = softmax_backward(p, &dp, (t, t, 1));
        ds.iter_mut().for_each(|s| *s *= scale);
        let mut dq = vec![0.0f32; t * dh];
        gemm(t, t, dh, &ds, (t, 1), &k[base..], (d, 1), 0.0, &mut dq);
        let mut dk = vec![0.0f32; t * dh];
        gemm(t, t, dh, &ds, (1, t), &q[base..], (d, 1), 0.0, &mut dk);
        (dq, dk, dv)
    });
    let mut dq = vec![0.0f32; b * t * d];
    let mut dk = vec![0.0f32; b * t * d];
    let mut dv = vec![0.0f32; b * t * d];
    for (bh, (pq, pk, pv)) in parts.into_iter().enumerate() {
        let (bi, hi) = (bh / heads, bh % heads);
        for ti in 0..t {
            let dst = bi * t * d + ti * d + hi * dh;
            let src = ti * dh..(ti + 1) * dh;
            dq[dst..dst + dh].copy_from_slice(&pq[src.clone()]);
            dk[dst..dst + dh].copy_from_slice(&pk[src.clone()]);
            dv[dst..dst + dh].copy_from_slice(&pv[src]);
        }
    }
    (dq, dk, dv)
}

pub fn upsample2x_forward(x: &[f32], [n, c, h, w]: [usize; 4]) -> Vec<f32> {
    let mut out = vec![0.0f32; n * c * h * w * 4];
    for (p, plane) in x.chunks(h * w).enumerate() {
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward(dy: &[f32], [n, c, h, w]: [usize; 4]) -> Vec<f32> {
    let mut dx = vec![0.0f32; n * c * h * w];
    for (p, plane) in dx.chunks_mut(h * w).enumerate() {
        let src = &dy[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                plane[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
            }
        }
    }
    dx
}

/// Index of `x[n, c, a*band + r, col]` for token `(n*areas + a, r*w + col, c)`.
/// Returns a gather table mapping token-layout positions to NCHW positions.
pub fn area_token_index([n, c, h, w]: [usize; 4], areas: usize) -> Vec<usize> {
    let band = h / areas;
    let t = band * w;
    let mut idx = Vec::with_capacity(n * c * h * w);
    for ni in 0..n {
        for a in 0..areas {
            for ti in 0..t {
                let (r, col) = (ti / w, ti % w);
                for ci in 0..c {
                    idx.push(((ni * c + ci) * h + a * band + r) * w + col);
                }
            }
        }
    }
    idx
}
