use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::kv::{self, KvError, KvMap};

use super::ArchError;

/// Output strides of the three pyramid levels.
pub const STRIDES: [usize; 3] = [8, 16, 32];
/// Every network input must be a multiple of this.
pub const MAX_STRIDE: usize = 32;

/// The two compared detector families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// C2f backbone without attention.
    V8,
    /// Same backbone with area attention after the two deepest stages.
    V12,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::V8 => "v8",
            Variant::V12 => "v12",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v8" => Ok(Variant::V8),
            "v12" => Ok(Variant::V12),
            other => Err(format!("unknown variant `{other}` (expected v8 or v12)")),
        }
    }
}

/// Width, depth and attention layout of a backbone-neck-head instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub base_channels: usize,
    /// Cap on per-stage channel width.
    pub max_channels: usize,
    pub depth_per_stage: Vec<usize>,
    pub num_stages: usize,
    /// Stage indices followed by an area-attention block.
    pub attention_stages: BTreeSet<usize>,
    pub attention_areas: usize,
    pub heads: usize,
    pub num_classes: usize,
    /// Bottlenecks per C2f block in the neck.
    pub neck_depth: usize,
    pub reg_branch_channels: usize,
    pub cls_branch_channels: usize,
}

impl Default for ModelConfig {
    /// The desk-scale configuration used throughout the tests.
    fn default() -> Self {
        Self {
            base_channels: 8,
            max_channels: 64,
            depth_per_stage: vec![1, 1, 1, 1],
            num_stages: 4,
            attention_stages: BTreeSet::new(),
            attention_areas: 4,
            heads: 2,
            num_classes: 1,
            neck_depth: 1,
            reg_branch_channels: 16,
            cls_branch_channels: 16,
        }
    }
}

impl ModelConfig {
    /// Attention in the two deepest stages for `V12`, none for `V8`. All
    /// other fields are untouched.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.attention_stages = match variant {
            Variant::V8 => BTreeSet::new(),
            Variant::V12 => (self.num_stages.saturating_sub(2)..self.num_stages).collect(),
        };
        self
    }

    pub fn variant(&self) -> Variant {
        if self.attention_stages.is_empty() {
            Variant::V8
        } else {
            Variant::V12
        }
    }

    /// Output channels of stage `i`.
    pub fn stage_channels(&self, i: usize) -> usize {
        (self.base_channels << (i + 1)).min(self.max_channels)
    }

    /// Channels of the three pyramid levels (strides 8, 16, 32).
    pub fn pyramid_channels(&self) -> [usize; 3] {
        [
            self.stage_channels(1),
            self.stage_channels(2),
            self.stage_channels(3),
        ]
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let bad = |msg: String| Err(ArchError::Config(msg));
        if self.num_stages != 4 {
            return bad(format!(
                "num_stages must be 4 (strides 4..32), got {}",
                self.num_stages
            ));
        }
        if self.depth_per_stage.len() != self.num_stages {
            return bad(format!(
                "depth_per_stage has {} entries for {} stages",
                self.depth_per_stage.len(),
                self.num_stages
            ));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return bad("base_channels must be positive and ≤ max_channels".into());
        }
        if self.heads == 0 || self.base_channels < self.heads {
            return bad(format!(
                "heads ({}) must be in 1..=base_channels ({})",
                self.heads, self.base_channels
            ));
        }
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        if self.attention_areas == 0 {
            return bad("attention_areas must be at least 1".into());
        }
        if self.reg_branch_channels == 0 || self.cls_branch_channels == 0 {
            return bad("head branch widths must be positive".into());
        }
        for &s in &self.attention_stages {
            if s >= self.num_stages {
                return bad(format!("attention stage {s} is not a valid stage index"));
            }
            if self.stage_channels(s) % self.heads != 0 {
                return bad(format!(
                    "stage {s} width {} not divisible by {} heads",
                    self.stage_channels(s),
                    self.heads
                ));
            }
        }
        for i in 0..self.num_stages {
            if self.stage_channels(i) % 2 != 0 {
                return bad(format!("stage {i} width must be even for C2f"));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        kv::render([
            ("base_channels", self.base_channels.to_string()),
            ("max_channels", self.max_channels.to_string()),
            ("depth_per_stage", kv::join(&self.depth_per_stage)),
            ("num_stages", self.num_stages.to_string()),
            ("attention_stages", kv::join(&self.attention_stages)),
            ("attention_areas", self.attention_areas.to_string()),
            ("heads", self.heads.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("neck_depth", self.neck_depth.to_string()),
            ("reg_branch_channels", self.reg_branch_channels.to_string()),
            ("cls_branch_channels", self.cls_branch_channels.to_string()),
        ])
    }

    /// Parse `key=value` text; absent keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self, ArchError> {
        let mut kv = KvMap::parse(text)?;
        let cfg = Self::from_kv(&mut kv)?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub(crate) fn from_kv(kv: &mut KvMap) -> Result<Self, KvError> {
        let mut c = Self::default();
        kv.take_into("base_channels", &mut c.base_channels)?;
        kv.take_into("max_channels", &mut c.max_channels)?;
        if let Some(d) = kv.take_list("depth_per_stage")? {
            c.depth_per_stage = d;
        }
        kv.take_into("num_stages", &mut c.num_stages)?;
        if let Some(a) = kv.take_list::<usize>("attention_stages")? {
            c.attention_stages = a.into_iter().collect();
        }
        kv.take_into("attention_areas", &mut c.attention_areas)?;
        kv.take_into("heads", &mut c.heads)?;
        kv.take_into("num_classes", &mut c.num_classes)?;
        kv.take_into("neck_depth", &mut c.neck_depth)?;
        kv.take_into("reg_branch_channels", &mut c.reg_branch_channels)?;
        kv.take_into("cls_branch_channels", &mut c.cls_branch_channels)?;
        Ok(c)
    }
}
