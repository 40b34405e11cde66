//! Randomized finite-difference cases for every differentiable op and
//! composed block. Shared by the gradient tests and the acceptance run.

use lumendet::arch::blocks::{AreaAttention, Bottleneck, C2f, ConvBnAct, Ctx, Focus, Init};
use lumendet::arch::{FeaturePyramid, Model, ModelConfig, Variant};
use lumendet::postprocess::BBox;
use lumendet::tensor::{BnMode, ParamStore, Tape, Tensor, Var};
use lumendet::train::{assign_targets, compute_loss, LossWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check, Report, Sampling};

/// Relative error bound for ops and blocks.
pub const TOL: f64 = 1e-3;
/// Looser bound for the whole loss through the full network.
pub const LOSS_TOL: f64 = 1e-2;

pub struct Suite {
    pub name: &'static str,
    pub seeds: u64,
    pub tol: f64,
    pub run: fn(u64) -> Report,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0xfd)
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Values bounded away from zero with random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(lo..hi);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn unary(seed: u64, f: fn(&mut Tape, Var) -> Var) -> Report {
    let mut r = rng(seed);
    let x = Tensor::randn(&[2, 3, 3, 3], 2.0, &mut r);
    let fwd = move |t: &mut Tape, _: &ParamStore, v: &[Var]| vec![f(t, v[0])];
    check(&mut r, &mut ParamStore::new(), &[x], &fwd, Sampling::PerTensor(8))
}

fn binary(seed: u64, f: fn(&mut Tape, Var, Var) -> Var, b_from_a: fn(&mut ChaCha8Rng, &Tensor) -> Tensor) -> Report {
    let mut r = rng(seed);
    let a = normal(&mut r, &[2, 3, 4]);
    let b = b_from_a(&mut r, &a);
    let fwd = move |t: &mut Tape, _: &ParamStore, v: &[Var]| vec![f(t, v[0], v[1])];
    check(&mut r, &mut ParamStore::new(), &[a, b], &fwd, Sampling::PerTensor(8))
}

fn independent(r: &mut ChaCha8Rng, a: &Tensor) -> Tensor {
    normal(r, a.shape())
}

/// `a ± δ` with `δ ∈ [0.1, 1]`, so min/max stay away from their kink.
fn separated(r: &mut ChaCha8Rng, a: &Tensor) -> Tensor {
    let d = away_from_zero(r, a.shape(), 0.1, 1.0);
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(d.data()).map(|(x, d)| x + d).collect(),
    )
    .unwrap()
}

fn denominators(r: &mut ChaCha8Rng, a: &Tensor) -> Tensor {
    away_from_zero(r, a.shape(), 0.5, 2.0)
}

fn conv(seed: u64) -> Report {
    let mut r = rng(seed);
    let stride = 1 + (seed % 2) as usize;
    let pad = ((seed / 2) % 2) as usize;
    let k = if seed % 5 == 0 { 1 } else { 3 };
    let x = normal(&mut r, &[2, 3, 6, 6]);
    let w = Tensor::randn(&[4, 3, k, k], 0.5, &mut r);
    let b = normal(&mut r, &[4]);
    let fwd = move |t: &mut Tape, _: &ParamStore, v: &[Var]| vec![t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap()];
    check(&mut r, &mut ParamStore::new(), &[x, w, b], &fwd, Sampling::PerTensor(8))
}

fn batchnorm(seed: u64, train: bool) -> Report {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let bn = Init {
        store: &mut store,
        seed,
    }
    .batchnorm("bn", 3);
    for id in [bn.gamma, bn.beta, bn.running_mean, bn.running_var] {
        let t = store.get_mut(id);
        let n = t.numel();
        let vals: Vec<f32> = (0..n).map(|_| r.gen_range(0.5..1.5)).collect();
        t.data_mut().copy_from_slice(&vals);
    }
    let x = Tensor::randn(&[3, 3, 3, 3], 1.5, &mut r);
    let mode = if train {
        BnMode::Train { momentum: 0.1 }
    } else {
        BnMode::Eval
    };
    let fwd = move |t: &mut Tape, s: &ParamStore, v: &[Var]| vec![t.batchnorm2d(s, v[0], &bn, mode, 1e-3).unwrap()];
    check(&mut r, &mut store, &[x], &fwd, Sampling::PerTensor(8))
}

fn softmax(seed: u64) -> Report {
    let mut r = rng(seed);
    let axis = (seed % 3) as usize;
    let x = Tensor::randn(&[2, 3, 4], 2.0, &mut r);
    let fwd = move |t: &mut Tape, _: &ParamStore, v: &[Var]| vec![t.softmax(v[0], axis).unwrap()];
    check(&mut r, &mut ParamStore::new(), &[x], &fwd, Sampling::PerTensor(8))
}

fn shape_ops(seed: u64) -> Report {
    let mut r = rng(seed);
    let a = normal(&mut r, &[2, 2, 2, 3]);
    let b = normal(&mut r, &[2, 3, 2, 3]);
    let idx: Vec<usize> = (0..10).map(|_| r.gen_range(0..12)).collect();
    let fwd = move |t: &mut Tape, _: &ParamStore, v: &[Var]| {
        let up = t.upsample2x(v[0]).unwrap();
        let cat = t.concat(&[v[0], v[1]], 1).unwrap();
        let sl = t.slice(cat, 1, 1, 3).unwrap();
        let flat = t.reshape(v[0], &[24]).unwrap();
        let g = t.gather(flat, idx.clone(), &[2, 5]).unwrap();
        let m = t.mean(v[1]);
        vec![up, sl, g, m]
    };
    check(&mut r, &mut ParamStore::new(), &[a, b], &fwd, Sampling::PerTensor(10))
}

fn bce(seed: u64) -> Report {
    let mut r = rng(seed);
    let x = Tensor::randn(&[3, 5], 2.0, &mut r);
    let target: Vec<f32> = (0..15).map(|_| r.gen_range(0.0..1.0)).collect();
    let fwd = move |t: &mut Tape, _: &ParamStore, v: &[Var]| vec![t.bce_with_logits_sum(v[0], target.clone()).unwrap()];
    check(&mut r, &mut ParamStore::new(), &[x], &fwd, Sampling::PerTensor(8))
}

fn attention(seed: u64) -> Report {
    let mut r = rng(seed);
    let heads = 1 + (seed % 2) as usize;
    let q = normal(&mut r, &[2, 5, 4]);
    let k = normal(&mut r, &[2, 5, 4]);
    let v = normal(&mut r, &[2, 5, 4]);
    let fwd = move |t: &mut Tape, _: &ParamStore, x: &[Var]| vec![t.attention(x[0], x[1], x[2], heads).unwrap()];
    check(&mut r, &mut ParamStore::new(), &[q, k, v], &fwd, Sampling::PerTensor(8))
}

/// Build a block into a fresh store and check it on a random input.
fn block<B: 'static>(
    seed: u64,
    shape: &[usize],
    make: impl FnOnce(&mut Init) -> B,
    run: fn(&B, &mut Ctx, Var) -> Var,
) -> Report {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let b = make(&mut Init {
        store: &mut store,
        seed,
    });
    let x = normal(&mut r, shape);
    let fwd = move |t: &mut Tape, s: &ParamStore, v: &[Var]| {
        let mut ctx = Ctx::new(t, s, true);
        vec![run(&b, &mut ctx, v[0])]
    };
    check(&mut r, &mut store, &[x], &fwd, Sampling::PerTensor(4))
}

fn conv_bn_act(seed: u64) -> Report {
    block(
        seed,
        &[2, 3, 5, 5],
        |i| ConvBnAct::new(i, "cba", 3, 4, 3, 1 + (seed % 2) as usize),
        |b, c, x| b.forward(c, x).unwrap(),
    )
}

fn bottleneck(seed: u64) -> Report {
    block(seed, &[2, 4, 4, 4], |i| Bottleneck::new(i, "bn", 4, 4), |b, c, x| b.forward(c, x).unwrap())
}

fn c2f(seed: u64) -> Report {
    block(
        seed,
        &[2, 4, 4, 4],
        |i| C2f::new(i, "c2f", 4, 6, 1 + (seed % 2) as usize).unwrap(),
        |b, c, x| b.forward(c, x).unwrap(),
    )
}

fn focus(seed: u64) -> Report {
    block(seed, &[2, 3, 4, 4], |i| Focus::new(i, "focus", 3, 4), |b, c, x| b.forward(c, x).unwrap())
}

fn area_attention(seed: u64) -> Report {
    block(
        seed,
        &[2, 4, 4, 3],
        |i| AreaAttention::new(i, "a2", 4, 2, 2),
        |b, c, x| b.forward(c, x).unwrap(),
    )
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        base_channels: 2,
        max_channels: 8,
        reg_branch_channels: 4,
        cls_branch_channels: 4,
        heads: 2,
        attention_areas: 2,
        ..ModelConfig::default()
    }
    .with_variant(Variant::V12)
}

fn neck(seed: u64) -> Report {
    let mut r = rng(seed);
    let mut model = Model::new(tiny_config(), seed).unwrap();
    let [c3, c4, c5] = model.config().pyramid_channels();
    let inputs = [
        normal(&mut r, &[1, c3, 4, 4]),
        normal(&mut r, &[1, c4, 2, 2]),
        normal(&mut r, &[1, c5, 1, 1]),
    ];
    let mut store = std::mem::take(model.store_mut());
    let fwd = move |t: &mut Tape, s: &ParamStore, v: &[Var]| {
        let mut ctx = Ctx::new(t, s, false);
        let p = FeaturePyramid {
            p3: v[0],
            p4: v[1],
            p5: v[2],
        };
        model.neck_forward(&mut ctx, p).unwrap().levels().to_vec()
    };
    check(&mut r, &mut store, &inputs, &fwd, Sampling::Params(30))
}

fn head(seed: u64) -> Report {
    let mut r = rng(seed);
    let mut model = Model::new(tiny_config(), seed).unwrap();
    let [c3, c4, c5] = model.config().pyramid_channels();
    let inputs = [
        normal(&mut r, &[1, c3, 4, 4]),
        normal(&mut r, &[1, c4, 2, 2]),
        normal(&mut r, &[1, c5, 1, 1]),
    ];
    let mut store = std::mem::take(model.store_mut());
    let fwd = move |t: &mut Tape, s: &ParamStore, v: &[Var]| {
        let mut ctx = Ctx::new(t, s, false);
        let p = FeaturePyramid {
            p3: v[0],
            p4: v[1],
            p5: v[2],
        };
        let out = model.head_forward(&mut ctx, p).unwrap();
        out.levels.iter().flat_map(|l| [l.boxes, l.obj, l.cls]).collect()
    };
    check(&mut r, &mut store, &inputs, &fwd, Sampling::Params(30))
}

/// Full training loss of a two-image 64×64 batch through the whole
/// network, probed on 20 random parameters.
fn full_loss(seed: u64) -> Report {
    let mut r = rng(seed);
    let mut model = Model::new(tiny_config(), seed).unwrap();
    let image = Tensor::uniform(&[2, 3, 64, 64], 0.0, 1.0, &mut r);
    let gts = vec![
        vec![
            (0, BBox::new(6.0, 8.0, 18.0, 22.0)),
            (0, BBox::new(20.0, 16.0, 52.0, 44.0)),
            (0, BBox::new(30.0, 40.0, 36.0, 47.0)),
        ],
        vec![(0, BBox::new(12.0, 30.0, 40.0, 58.0))],
    ];
    let targets = assign_targets(&gts, 64);
    let mut store = std::mem::take(model.store_mut());
    let fwd = move |t: &mut Tape, s: &ParamStore, v: &[Var]| {
        let mut ctx = Ctx::new(t, s, true);
        let p = model.backbone_forward(&mut ctx, v[0]).unwrap();
        let n = model.neck_forward(&mut ctx, p).unwrap();
        let out = model.head_forward(&mut ctx, n).unwrap();
        let (loss, _) = compute_loss(t, &out, &targets, LossWeights::default()).unwrap();
        vec![loss]
    };
    check(&mut r, &mut store, &[image], &fwd, Sampling::Params(20))
}

pub fn suites() -> Vec<Suite> {
    macro_rules! s {
        ($name:expr, $seeds:expr, $run:expr) => {
            s!($name, $seeds, $run, TOL)
        };
        ($name:expr, $seeds:expr, $run:expr, $tol:expr) => {
            Suite {
                name: $name,
                seeds: $seeds,
                tol: $tol,
                run: $run,
            }
        };
    }
    vec![
        s!("conv2d", 100, conv),
        s!("batchnorm2d/train", 100, |s| batchnorm(s, true)),
        s!("batchnorm2d/eval", 100, |s| batchnorm(s, false)),
        s!("silu", 100, |s| unary(s, |t, x| t.silu(x))),
        s!("sigmoid", 100, |s| unary(s, |t, x| t.sigmoid(x))),
        s!("softplus", 100, |s| unary(s, |t, x| t.softplus(x))),
        s!("atan", 100, |s| unary(s, |t, x| t.atan(x))),
        s!("scalar ops", 100, |s| unary(s, |t, x| {
            let y = t.mul_scalar(x, -1.7);
            t.add_scalar(y, 0.3)
        })),
        s!("add", 100, |s| binary(s, |t, a, b| t.add(a, b).unwrap(), independent)),
        s!("sub", 100, |s| binary(s, |t, a, b| t.sub(a, b).unwrap(), independent)),
        s!("mul", 100, |s| binary(s, |t, a, b| t.mul(a, b).unwrap(), independent)),
        s!("div", 100, |s| binary(s, |t, a, b| t.div(a, b).unwrap(), denominators)),
        s!("minimum", 100, |s| binary(s, |t, a, b| t.minimum(a, b).unwrap(), separated)),
        s!("maximum", 100, |s| binary(s, |t, a, b| t.maximum(a, b).unwrap(), separated)),
        s!("softmax", 100, softmax),
        s!("upsample/concat/slice/gather/mean", 100, shape_ops),
        s!("bce_with_logits_sum", 100, bce),
        s!("attention", 100, attention),
        s!("conv-bn-silu", 25, conv_bn_act),
        s!("bottleneck", 25, bottleneck),
        s!("c2f", 25, c2f),
        s!("focus", 25, focus),
        s!("a2 attention", 25, area_attention),
        s!("neck", 10, neck),
        s!("head", 10, head),
        s!("full loss", 20, full_loss, LOSS_TOL),
    ]
}
