//! Building blocks: Conv-BN-SiLU, Focus stem, C2f, and area attention.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::kernels::area_token_index;
use crate::tensor::{BnMode, BnParams, ParamId, ParamKind, ParamStore, Tape, Tensor, TensorError, Var};

use super::ArchError;

pub const BN_EPS: f32 = 1e-3;
pub const BN_MOMENTUM: f32 = 0.03;

/// Forward-pass context shared by all blocks.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    pub mode: BnMode,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, train: bool) -> Self {
        let mode = if train {
            BnMode::Train {
                momentum: BN_MOMENTUM,
            }
        } else {
            BnMode::Eval
        };
        Self { tape, store, mode }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }
}

/// Registers parameters with initial values derived from `(seed, name)`, so
/// a parameter's initial value does not depend on which other parameters
/// exist.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub seed: u64,
}

impl Init<'_> {
    fn rng_for(&self, name: &str) -> ChaCha8Rng {
        // FNV-1a over the name, mixed with the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        ChaCha8Rng::seed_from_u64(h ^ self.seed.rotate_left(17))
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn conv_weight(&mut self, name: &str, cout: usize, cin: usize, k: usize) -> ParamId {
        let bound = 1.0 / ((cin * k * k) as f32).sqrt();
        let mut rng = self.rng_for(name);
        let t = Tensor::uniform(&[cout, cin, k, k], -bound, bound, &mut rng);
        self.store.add(name, ParamKind::Trainable, t)
    }

    pub fn constant(&mut self, name: &str, len: usize, value: f32) -> ParamId {
        self.store
            .add(name, ParamKind::Trainable, Tensor::full(&[len], value))
    }

    pub fn batchnorm(&mut self, name: &str, c: usize) -> BnParams {
        BnParams {
            gamma: self.constant(&format!("{name}.gamma"), c, 1.0),
            beta: self.constant(&format!("{name}.beta"), c, 0.0),
            running_mean: self.store.add(
                format!("{name}.running_mean"),
                ParamKind::Buffer,
                Tensor::zeros(&[c]),
            ),
            running_var: self.store.add(
                format!("{name}.running_var"),
                ParamKind::Buffer,
                Tensor::full(&[c], 1.0),
            ),
        }
    }

    /// Uniform bias in `±1/sqrt(fan_in)`.
    pub fn bias(&mut self, name: &str, len: usize, fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let mut rng = self.rng_for(name);
        let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
        self.store.add(
            name,
            ParamKind::Trainable,
            Tensor::new(vec![len], data).expect("len > 0"),
        )
    }
}

/// Convolution (no bias) → batch norm → SiLU.
#[derive(Clone, Debug)]
pub struct ConvBnAct {
    pub weight: ParamId,
    pub bn: BnParams,
    pub stride: usize,
    pub pad: usize,
    pub cout: usize,
}

impl ConvBnAct {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Self {
            weight: init.conv_weight(&format!("{name}.conv.weight"), cout, cin, k),
            bn: init.batchnorm(&format!("{name}.bn"), cout),
            stride,
            pad: k / 2,
            cout,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var, TensorError> {
        let w = ctx.param(self.weight);
        let y = ctx.tape.conv2d(x, w, None, self.stride, self.pad)?;
        let y = ctx.tape.batchnorm2d(ctx.store, y, &self.bn, ctx.mode, BN_EPS)?;
        Ok(ctx.tape.silu(y))
    }
}

/// Plain convolution with bias (prediction layers, attention projections).
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub pad: usize,
}

impl Conv {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            weight: init.conv_weight(&format!("{name}.weight"), cout, cin, k),
            bias: init.bias(&format!("{name}.bias"), cout, cin * k * k),
            pad: k / 2,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var, TensorError> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.tape.conv2d(x, w, Some(b), 1, self.pad)
    }
}

/// Space-to-depth: `out[c·4 + 2·di + dj][i][j] = in[c][2i + di][2j + dj]`.
pub fn focus_rearrange(tape: &mut Tape, image: Var) -> Result<Var, ArchError> {
    let [n, c, h, w] = tape.value(image).dims4("focus")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(ArchError::InputSize(format!(
            "focus needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(n * c * h * w);
    for ni in 0..n {
        for ci in 0..c {
            for phase in 0..4 {
                let (di, dj) = (phase / 2, phase % 2);
                for i in 0..oh {
                    for j in 0..ow {
                        idx.push(((ni * c + ci) * h + 2 * i + di) * w + 2 * j + dj);
                    }
                }
            }
        }
    }
    Ok(tape.gather(image, idx, &[n, c * 4, oh, ow])?)
}

/// Focus stem: lossless 2×2 space-to-depth followed by a 3×3 Conv-BN-SiLU.
#[derive(Clone, Debug)]
pub struct Focus {
    pub conv: ConvBnAct,
}

impl Focus {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            conv: ConvBnAct::new(init, &format!("{name}.conv"), cin * 4, cout, 3, 1),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, image: Var) -> Result<Var, ArchError> {
        let x = focus_rearrange(ctx.tape, image)?;
        Ok(self.conv.forward(ctx, x)?)
    }
}

/// Two 3×3 Conv-BN-SiLU with a residual add when shapes allow it.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub cv1: ConvBnAct,
    pub cv2: ConvBnAct,
    pub residual: bool,
}

impl Bottleneck {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            cv1: ConvBnAct::new(init, &format!("{name}.cv1"), cin, cout, 3, 1),
            cv2: ConvBnAct::new(init, &format!("{name}.cv2"), cout, cout, 3, 1),
            residual: cin == cout,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var, TensorError> {
        let y = self.cv1.forward(ctx, x)?;
        let y = self.cv2.forward(ctx, y)?;
        if self.residual {
            ctx.tape.add(x, y)
        } else {
            Ok(y)
        }
    }
}

/// Cross-stage partial block with every bottleneck output retained.
#[derive(Clone, Debug)]
pub struct C2f {
    pub cv1: ConvBnAct,
    pub blocks: Vec<Bottleneck>,
    pub cv2: ConvBnAct,
    pub hidden: usize,
}

impl C2f {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, n: usize) -> Result<Self, ArchError> {
        if cout % 2 != 0 {
            return Err(ArchError::Config(format!(
                "C2f `{name}` needs an even channel count, got {cout}"
            )));
        }
        let hidden = cout / 2;
        Ok(Self {
            cv1: ConvBnAct::new(init, &format!("{name}.cv1"), cin, 2 * hidden, 1, 1),
            blocks: (0..n)
                .map(|i| Bottleneck::new(init, &format!("{name}.m{i}"), hidden, hidden))
                .collect(),
            cv2: ConvBnAct::new(init, &format!("{name}.cv2"), (2 + n) * hidden, cout, 1, 1),
            hidden,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var, TensorError> {
        let y = self.cv1.forward(ctx, x)?;
        let mut parts = vec![
            ctx.tape.slice(y, 1, 0, self.hidden)?,
            ctx.tape.slice(y, 1, self.hidden, self.hidden)?,
        ];
        for b in &self.blocks {
            let last = *parts.last().expect("non-empty");
            parts.push(b.forward(ctx, last)?);
        }
        let cat = ctx.tape.concat(&parts, 1)?;
        self.cv2.forward(ctx, cat)
    }
}

/// Largest band count `≤ wanted` that divides `h`.
pub fn effective_areas(h: usize, wanted: usize) -> usize {
    (1..=wanted.min(h)).rev().find(|a| h % a == 0).unwrap_or(1)
}

/// Area attention over horizontal bands: pixels of each band attend to each
/// other; output is `x + attention(q, k, v)`.
///
/// Fails when `h` is not divisible by `areas` or `c` by `heads`.
pub fn a2_attention(
    tape: &mut Tape,
    x: Var,
    q: Var,
    k: Var,
    v: Var,
    areas: usize,
    heads: usize,
) -> Result<Var, ArchError> {
    let [n, c, h, w] = tape.value(x).dims4("a2_attention")?;
    if areas == 0 || h % areas != 0 {
        return Err(ArchError::InputSize(format!(
            "height {h} is not divisible into {areas} areas"
        )));
    }
    if heads == 0 || c % heads != 0 {
        return Err(ArchError::Config(format!(
            "{c} channels not divisible by {heads} heads"
        )));
    }
    let idx = area_token_index([n, c, h, w], areas);
    let tokens = [n * areas, (h / areas) * w, c];
    let mut inverse = vec![0usize; idx.len()];
    for (t, &p) in idx.iter().enumerate() {
        inverse[p] = t;
    }
    let tq = tape.gather(q, idx.clone(), &tokens)?;
    let tk = tape.gather(k, idx.clone(), &tokens)?;
    let tv = tape.gather(v, idx, &tokens)?;
    let att = tape.attention(tq, tk, tv, heads)?;
    let back = tape.gather(att, inverse, &[n, c, h, w])?;
    Ok(tape.add(x, back)?)
}

/// 1×1 q/k/v projections feeding [`a2_attention`].
#[derive(Clone, Debug)]
pub struct AreaAttention {
    pub q: Conv,
    pub k: Conv,
    pub v: Conv,
    pub areas: usize,
    pub heads: usize,
}

impl AreaAttention {
    pub fn new(init: &mut Init, name: &str, c: usize, areas: usize, heads: usize) -> Self {
        Self {
            q: Conv::new(init, &format!("{name}.q"), c, c, 1),
            k: Conv::new(init, &format!("{name}.k"), c, c, 1),
            v: Conv::new(init, &format!("{name}.v"), c, c, 1),
            areas,
            heads,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var, ArchError> {
        let h = ctx.tape.shape(x)[2];
        let areas = effective_areas(h, self.areas);
        let q = self.q.forward(ctx, x)?;
        let k = self.k.forward(ctx, x)?;
        let v = self.v.forward(ctx, x)?;
        a2_attention(ctx.tape, x, q, k, v, areas, self.heads)
    }
}
