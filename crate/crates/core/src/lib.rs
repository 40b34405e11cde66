//! Anchor-free lumen detection on the CPU.

pub mod arch;
pub mod data;
pub mod exec;
pub mod infer;
pub mod kv;
pub mod metrics;
pub mod postprocess;
pub mod tensor;
pub mod train;

/// Any failure of the end-to-end pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Arch(#[from] arch::ArchError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Postprocess(#[from] postprocess::PostprocessError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
}
