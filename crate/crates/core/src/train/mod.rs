//! Target assignment, the combined detection loss, and the seeded training
//! loop.

mod assign;
mod config;
mod fit;
mod loss;

pub use assign::{assign_targets, level_for, AssignedTargets, CellTarget, LevelTargets};
pub use config::{parse_run_config, LossWeights, TrainConfig};
pub use fit::{fit, log_csv, train_checkpoint, EpochRecord, TrainOutcome, LOG_HEADER, TRAIN_CONFIG_KEY};
pub use loss::{ciou, compute_loss, LossBreakdown};

use crate::kv::KvError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Arch(#[from] crate::arch::ArchError),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: String,
        epoch: usize,
        batch: usize,
    },
    #[error("training split is empty")]
    EmptySplit,
}
