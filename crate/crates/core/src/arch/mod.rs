//! Detector architectures: C2f backbone with a Focus stem, optional area
//! attention in deep stages, PAN neck, and a decoupled anchor-free head.

pub mod blocks;
mod config;
mod model;

pub use config::{ModelConfig, Variant, MAX_STRIDE, STRIDES};
pub use model::{FeaturePyramid, HeadOutput, LevelOutput, LevelPrediction, Model, RawPrediction};

use crate::kv::KvError;
use crate::tensor::{Checkpoint, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ArchError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InputSize(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Metadata key holding the model config text inside a checkpoint.
pub const MODEL_CONFIG_KEY: &str = "model_config";

impl Model {
    /// Parameters and buffers plus the embedded model config.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            tensors: self.store().named_tensors(),
            meta: vec![(MODEL_CONFIG_KEY.to_string(), self.config().to_text())],
        }
    }

    /// Rebuild a model from a checkpoint carrying its config.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ArchError> {
        let text = ck
            .meta(MODEL_CONFIG_KEY)
            .ok_or_else(|| ArchError::Config("checkpoint has no embedded model config".into()))?;
        let config = ModelConfig::from_text(text)?;
        let mut model = Model::new(config, 0)?;
        model.store_mut().load_named(&ck.tensors)?;
        Ok(model)
    }

    /// The same weights with every attention block dropped. For a V12 model
    /// this is a V8 model.
    pub fn without_attention(&self) -> Result<Self, ArchError> {
        let mut config = self.config().clone();
        config.attention_stages.clear();
        let mut model = Model::new(config, 0)?;
        let kept: Vec<(String, crate::tensor::Tensor)> = self
            .store()
            .named_tensors()
            .into_iter()
            .filter(|(name, _)| model.store().id_of(name).is_some())
            .collect();
        model.store_mut().load_named(&kept)?;
        Ok(model)
    }
}
