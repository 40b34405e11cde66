//! Single-head attention written out as explicit matrix products in f64.

/// `softmax(q·kᵀ/√d)·v` for row-major `[t, d]` matrices.
pub fn attention_reference(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize) -> Vec<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; t * d];
    for i in 0..t {
        let scores: Vec<f64> = (0..t)
            .map(|j| (0..d).map(|e| q[i * d + e] * k[j * d + e]).sum::<f64>() * scale)
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = ex.iter().sum();
        for j in 0..t {
            for e in 0..d {
                out[i * d + e] += ex[j] / z * v[j * d + e];
            }
        }
    }
    out
}
