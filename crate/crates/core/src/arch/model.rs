use crate::tensor::{ParamStore, Tape, Tensor, Var};

use super::blocks::{AreaAttention, C2f, Conv, ConvBnAct, Ctx, Focus, Init};
use super::config::{ModelConfig, MAX_STRIDE, STRIDES};
use super::ArchError;

/// Feature maps at strides 8, 16, 32.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub p3: Var,
    pub p4: Var,
    pub p5: Var,
}

impl FeaturePyramid {
    pub fn levels(&self) -> [Var; 3] {
        [self.p3, self.p4, self.p5]
    }
}

/// Head outputs of one pyramid level, still on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LevelOutput {
    /// `[n, 4, h, w]` l,t,r,b distances in stride units, pre-activation.
    pub boxes: Var,
    /// `[n, 1, h, w]` objectness logits.
    pub obj: Var,
    /// `[n, num_classes, h, w]` class logits.
    pub cls: Var,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub struct HeadOutput {
    pub levels: Vec<LevelOutput>,
}

/// Materialized head outputs of one pyramid level.
#[derive(Clone, Debug)]
pub struct LevelPrediction {
    pub boxes: Tensor,
    pub obj: Tensor,
    pub cls: Tensor,
    pub stride: usize,
}

/// Raw network output for a batch, detached from the tape.
#[derive(Clone, Debug)]
pub struct RawPrediction {
    pub levels: Vec<LevelPrediction>,
    pub input_size: usize,
}

impl RawPrediction {
    pub fn from_tape(tape: &Tape, out: &HeadOutput, input_size: usize) -> Self {
        Self {
            levels: out
                .levels
                .iter()
                .map(|l| LevelPrediction {
                    boxes: tape.value(l.boxes).clone(),
                    obj: tape.value(l.obj).clone(),
                    cls: tape.value(l.cls).clone(),
                    stride: l.stride,
                })
                .collect(),
            input_size,
        }
    }

    pub fn batch(&self) -> usize {
        self.levels[0].boxes.shape()[0]
    }

    /// Grid cells over all levels for one image.
    pub fn cells_per_image(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.boxes.shape()[2] * l.boxes.shape()[3])
            .sum()
    }
}

#[derive(Clone, Debug)]
struct Stage {
    down: ConvBnAct,
    c2f: C2f,
    attention: Option<AreaAttention>,
}

#[derive(Clone, Debug)]
struct Neck {
    td4: C2f,
    td3: C2f,
    down3: ConvBnAct,
    bu4: C2f,
    down4: ConvBnAct,
    bu5: C2f,
}

#[derive(Clone, Debug)]
struct HeadLevel {
    reg: [ConvBnAct; 2],
    reg_out: Conv,
    cls: [ConvBnAct; 2],
    cls_out: Conv,
}

/// Initial objectness bias, `logit(0.01)`.
const OBJ_PRIOR_BIAS: f32 = -4.595;
/// Initial box bias: softplus of this is 1.5 stride units.
const BOX_PRIOR_BIAS: f32 = 1.2587;

/// A complete detector: Focus stem, C2f stages with optional area attention,
/// PAN neck, and a decoupled anchor-free head.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    stem: Focus,
    stages: Vec<Stage>,
    neck: Neck,
    head: Vec<HeadLevel>,
}

impl Model {
    /// Build a model with parameters initialized from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ArchError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            seed,
        };
        let c = &config;
        let stem = Focus::new(&mut init, "stem", 3, c.base_channels);
        let mut stages = Vec::with_capacity(c.num_stages);
        let mut cin = c.base_channels;
        for i in 0..c.num_stages {
            let cout = c.stage_channels(i);
            let name = format!("backbone.stage{i}");
            stages.push(Stage {
                down: ConvBnAct::new(&mut init, &format!("{name}.down"), cin, cout, 3, 2),
                c2f: C2f::new(&mut init, &format!("{name}.c2f"), cout, cout, c.depth_per_stage[i])?,
                attention: c.attention_stages.contains(&i).then(|| {
                    AreaAttention::new(
                        &mut init,
                        &format!("{name}.attn"),
                        cout,
                        c.attention_areas,
                        c.heads,
                    )
                }),
            });
            cin = cout;
        }
        let [c3, c4, c5] = c.pyramid_channels();
        let nd = c.neck_depth;
        let neck = Neck {
            td4: C2f::new(&mut init, "neck.td4", c5 + c4, c4, nd)?,
            td3: C2f::new(&mut init, "neck.td3", c4 + c3, c3, nd)?,
            down3: ConvBnAct::new(&mut init, "neck.down3", c3, c3, 3, 2),
            bu4: C2f::new(&mut init, "neck.bu4", c3 + c4, c4, nd)?,
            down4: ConvBnAct::new(&mut init, "neck.down4", c4, c4, 3, 2),
            bu5: C2f::new(&mut init, "neck.bu5", c4 + c5, c5, nd)?,
        };
        let (r, k) = (c.reg_branch_channels, c.cls_branch_channels);
        let mut head = Vec::with_capacity(3);
        for (l, &ch) in [c3, c4, c5].iter().enumerate() {
            let name = format!("head.p{}", l + 3);
            head.push(HeadLevel {
                reg: [
                    ConvBnAct::new(&mut init, &format!("{name}.reg0"), ch, r, 3, 1),
                    ConvBnAct::new(&mut init, &format!("{name}.reg1"), r, r, 3, 1),
                ],
                reg_out: Conv::new(&mut init, &format!("{name}.reg_out"), r, 4, 1),
                cls: [
                    ConvBnAct::new(&mut init, &format!("{name}.cls0"), ch, k, 3, 1),
                    ConvBnAct::new(&mut init, &format!("{name}.cls1"), k, k, 3, 1),
                ],
                cls_out: Conv::new(&mut init, &format!("{name}.cls_out"), k, 1 + c.num_classes, 1),
            });
        }
        for h in &head {
            store.get_mut(h.reg_out.bias).data_mut().fill(BOX_PRIOR_BIAS);
            let b = store.get_mut(h.cls_out.bias).data_mut();
            b.fill(0.0);
            b[0] = OBJ_PRIOR_BIAS;
        }
        Ok(Self {
            config,
            store,
            stem,
            stages,
            neck,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// Ids of the classification-branch parameters of every level.
    pub fn cls_branch_params(&self) -> Vec<crate::tensor::ParamId> {
        let prefixes: Vec<String> = (3..=5).map(|l| format!("head.p{l}.cls")).collect();
        self.store
            .ids()
            .filter(|&id| prefixes.iter().any(|p| self.store.name(id).starts_with(p.as_str())))
            .collect()
    }

    fn check_input(&self, tape: &Tape, image: Var) -> Result<usize, ArchError> {
        let [_, c, h, w] = tape.value(image).dims4("model input")?;
        if c != 3 {
            return Err(ArchError::InputSize(format!("expected 3 channels, got {c}")));
        }
        if h != w || h % MAX_STRIDE != 0 || h == 0 {
            return Err(ArchError::InputSize(format!(
                "input must be square and divisible by {MAX_STRIDE}, got {h}x{w}"
            )));
        }
        Ok(h)
    }

    pub fn backbone_forward(&self, ctx: &mut Ctx, image: Var) -> Result<FeaturePyramid, ArchError> {
        self.check_input(ctx.tape, image)?;
        let mut x = self.stem.forward(ctx, image)?;
        let mut taps = Vec::with_capacity(3);
        for (i, s) in self.stages.iter().enumerate() {
            x = s.down.forward(ctx, x)?;
            x = s.c2f.forward(ctx, x)?;
            if let Some(a) = &s.attention {
                x = a.forward(ctx, x)?;
            }
            if i + 3 >= self.stages.len() {
                taps.push(x);
            }
        }
        Ok(FeaturePyramid {
            p3: taps[0],
            p4: taps[1],
            p5: taps[2],
        })
    }

    pub fn neck_forward(&self, ctx: &mut Ctx, p: FeaturePyramid) -> Result<FeaturePyramid, ArchError> {
        let (s3, s4, s5) = (ctx.tape.shape(p.p3), ctx.tape.shape(p.p4), ctx.tape.shape(p.p5));
        if s3[2] != 2 * s4[2] || s4[2] != 2 * s5[2] || s3[3] != 2 * s4[3] || s4[3] != 2 * s5[3] {
            return Err(ArchError::InputSize(format!(
                "pyramid levels are not successive halvings: {s3:?} {s4:?} {s5:?}"
            )));
        }
        let n = &self.neck;
        let up5 = ctx.tape.upsample2x(p.p5)?;
        let cat = ctx.tape.concat_channels(up5, p.p4)?;
        let h4 = n.td4.forward(ctx, cat)?;
        let up4 = ctx.tape.upsample2x(h4)?;
        let cat = ctx.tape.concat_channels(up4, p.p3)?;
        let n3 = n.td3.forward(ctx, cat)?;
        let d3 = n.down3.forward(ctx, n3)?;
        let cat = ctx.tape.concat_channels(d3, h4)?;
        let n4 = n.bu4.forward(ctx, cat)?;
        let d4 = n.down4.forward(ctx, n4)?;
        let cat = ctx.tape.concat_channels(d4, p.p5)?;
        let n5 = n.bu5.forward(ctx, cat)?;
        Ok(FeaturePyramid {
            p3: n3,
            p4: n4,
            p5: n5,
        })
    }

    pub fn head_forward(&self, ctx: &mut Ctx, p: FeaturePyramid) -> Result<HeadOutput, ArchError> {
        let nc = self.config.num_classes;
        let mut levels = Vec::with_capacity(3);
        for ((h, x), &stride) in self.head.iter().zip(p.levels()).zip(&STRIDES) {
            let mut r = x;
            for conv in &h.reg {
                r = conv.forward(ctx, r)?;
            }
            let boxes = h.reg_out.forward(ctx, r)?;
            let mut c = x;
            for conv in &h.cls {
                c = conv.forward(ctx, c)?;
            }
            let oc = h.cls_out.forward(ctx, c)?;
            let obj = ctx.tape.slice(oc, 1, 0, 1)?;
            let cls = ctx.tape.slice(oc, 1, 1, nc)?;
            levels.push(LevelOutput {
                boxes,
                obj,
                cls,
                stride,
            });
        }
        Ok(HeadOutput { levels })
    }

    /// Full forward pass. `train` selects batch-statistics normalization.
    pub fn forward(&self, tape: &mut Tape, image: Var, train: bool) -> Result<HeadOutput, ArchError> {
        let mut ctx = Ctx::new(tape, &self.store, train);
        let p = self.backbone_forward(&mut ctx, image)?;
        let n = self.neck_forward(&mut ctx, p)?;
        self.head_forward(&mut ctx, n)
    }

    /// Eval-mode forward of an `[n, 3, s, s]` batch into detached outputs.
    pub fn predict(&self, batch: Tensor) -> Result<RawPrediction, ArchError> {
        let size = batch.shape().get(2).copied().unwrap_or(0);
        let mut tape = Tape::new();
        let x = tape.leaf(batch);
        let out = self.forward(&mut tape, x, false)?;
        Ok(RawPrediction::from_tape(&tape, &out, size))
    }
}
