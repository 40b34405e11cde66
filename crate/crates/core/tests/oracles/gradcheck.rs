//! Central finite-difference checks of tape gradients.
//!
//! The checked scalar is `Σ w·y` over every output element with fixed
//! random weights `w`, accumulated in f64. Each probe perturbs one input
//! or trainable parameter element by `±h` and compares the slope against
//! the analytic gradient.

use lumendet::tensor::{ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

pub const H: f32 = 1e-3;

/// Rounding allowance, in units of f32 epsilon per unit of moved output.
/// Outputs that did not move at all are allowed one epsilon: their true
/// change is below f32 resolution.
pub const NOISE_ULPS: f64 = 8.0;
/// Central differences taken per probe, with steps `H·(1 + k/10)`. The
/// true slopes agree far below any tolerance here, so their spread measures
/// the f32 rounding noise of the forward pass.
pub const JITTERS: usize = 5;
/// Allowance, in sample standard deviations of the jittered slopes.
pub const SPREAD_SIGMAS: f64 = 3.0;

#[derive(Clone, Debug)]
pub struct Probe {
    pub what: String,
    pub analytic: f64,
    pub numeric: f64,
    /// Slope error attributable to f32 rounding of the outputs that moved.
    pub noise: f64,
}

impl Probe {
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }

    /// Passes when `|a − n| ≤ tol·max(|a|, |n|) + noise`.
    pub fn passes(&self, tol: f64) -> bool {
        (self.analytic - self.numeric).abs() <= tol * self.analytic.abs().max(self.numeric.abs()) + self.noise
    }

    /// Error over the allowance; below 1 passes.
    pub fn excess(&self, tol: f64) -> f64 {
        (self.analytic - self.numeric).abs() / (tol * self.analytic.abs().max(self.numeric.abs()) + self.noise)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub probes: Vec<Probe>,
}

impl Report {
    pub fn worst(&self, tol: f64) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.excess(tol).total_cmp(&b.excess(tol)))
    }
}

pub type Forward<'f> = dyn Fn(&mut Tape, &ParamStore, &[Var]) -> Vec<Var> + 'f;

/// Every weighted output term `w·y`, in f64.
fn objective_terms(forward: &Forward, store: &ParamStore, inputs: &[Tensor], weights: &[Vec<f32>]) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let outs = forward(&mut tape, store, &vars);
    outs.iter()
        .zip(weights)
        .flat_map(|(&o, w)| {
            tape.value(o)
                .data()
                .iter()
                .zip(w)
                .map(|(&y, &w)| y as f64 * w as f64)
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Target {
    Input(usize, usize),
    Param(usize, usize),
}

/// Which elements to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Sampling {
    /// Up to `k` random elements of every input and trainable parameter.
    PerTensor(usize),
    /// `n` random trainable parameter elements drawn across the whole store.
    Params(usize),
}

pub fn check<R: Rng>(
    rng: &mut R,
    store: &mut ParamStore,
    inputs: &[Tensor],
    forward: &Forward,
    sampling: Sampling,
) -> Report {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let outs = forward(&mut tape, store, &vars);
    let weights: Vec<Vec<f32>> = outs
        .iter()
        .map(|&o| {
            let n = tape.value(o).numel();
            if n == 1 && outs.len() == 1 {
                vec![1.0]
            } else {
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
            }
        })
        .collect();
    let mut total = None;
    for (&o, w) in outs.iter().zip(&weights) {
        let wv = tape.leaf(Tensor::new(tape.shape(o).to_vec(), w.clone()).unwrap());
        let p = tape.mul(o, wv).unwrap();
        let s = tape.sum(p);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s).unwrap(),
        });
    }
    let grads = tape.backward(total.expect("at least one output"), store).unwrap();
    let input_grads: Vec<Vec<f32>> = vars.iter().map(|&v| grads.get(v).unwrap().to_vec()).collect();

    let params: Vec<_> = store.trainable_ids().collect();
    let mut targets = Vec::new();
    match sampling {
        Sampling::PerTensor(k) => {
            for (i, t) in inputs.iter().enumerate() {
                let mut idx: Vec<usize> = (0..t.numel()).collect();
                idx.shuffle(rng);
                targets.extend(idx.into_iter().take(k).map(|e| Target::Input(i, e)));
            }
            for (p, &id) in params.iter().enumerate() {
                let mut idx: Vec<usize> = (0..store.get(id).numel()).collect();
                idx.shuffle(rng);
                targets.extend(idx.into_iter().take(k).map(|e| Target::Param(p, e)));
            }
        }
        Sampling::Params(n) => {
            let all: Vec<(usize, usize)> = params
                .iter()
                .enumerate()
                .flat_map(|(p, &id)| (0..store.get(id).numel()).map(move |e| (p, e)))
                .collect();
            targets.extend(all.choose_multiple(rng, n).map(|&(p, e)| Target::Param(p, e)));
        }
    }

    let mut report = Report::default();
    let mut inputs = inputs.to_vec();
    for t in targets {
        let (x0, analytic, what) = match t {
            Target::Input(i, e) => (inputs[i].data()[e], input_grads[i][e] as f64, format!("input {i}[{e}]")),
            Target::Param(p, e) => {
                let id = params[p];
                let g = store.get(id).grad.as_ref().map_or(0.0, |g| g[e] as f64);
                (store.get(id).data()[e], g, format!("{}[{e}]", store.name(id)))
            }
        };
        let set = |v: f32, inputs: &mut Vec<Tensor>, store: &mut ParamStore| match t {
            Target::Input(i, e) => inputs[i].data_mut()[e] = v,
            Target::Param(p, e) => store.get_mut(params[p]).data_mut()[e] = v,
        };
        let mut slopes = Vec::with_capacity(JITTERS);
        let mut noise: f64 = 0.0;
        for k in 0..JITTERS {
            let h = H * (1.0 + k as f32 * 0.1);
            let (xp, xm) = (x0 + h, x0 - h);
            set(xp, &mut inputs, store);
            let tp = objective_terms(forward, store, &inputs, &weights);
            set(xm, &mut inputs, store);
            let tm = objective_terms(forward, store, &inputs, &weights);
            let step = xp as f64 - xm as f64;
            let (mut moved, mut still) = (0.0, 0.0);
            for (a, b) in tp.iter().zip(&tm) {
                if a == b {
                    still += a.abs();
                } else {
                    moved += a.abs().max(b.abs());
                }
            }
            noise = noise.max((NOISE_ULPS * moved + still) * f32::EPSILON as f64 / step);
            slopes.push((tp.iter().sum::<f64>() - tm.iter().sum::<f64>()) / step);
        }
        set(x0, &mut inputs, store);
        let n = slopes.len() as f64;
        let mean = slopes.iter().sum::<f64>() / n;
        let spread = (slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        report.probes.push(Probe {
            what,
            analytic,
            numeric: mean,
            noise: noise.max(SPREAD_SIGMAS * spread),
        });
    }
    report
}
