//! Images, label files, dataset manifests, and the synthetic lumen-scene
//! generator.

mod image;
mod labels;
mod manifest;
mod splits;
mod synth;

pub use image::{is_supported_image, load_image, save_image, Image, ImageCodec, PpmCodec};
#[cfg(feature = "png")]
pub use image::PngCodec;
pub use labels::{parse_label_file, read_labels, write_label_file, LabelBox};
pub use manifest::{Domain, Manifest, Sample, Split};
pub use splits::{make_splits, split_counts, Splits, TABLE1_FRACTIONS};
pub use synth::{
    generate_dataset, synth_generate, synth_scene, Ellipse, Scene, SynthSpec, MIN_VISIBLE_FRACTION,
};

use std::path::Path;

use crate::kv::KvError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image parse error at byte {offset}: {msg}")]
    ImageParse { offset: usize, msg: String },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("image encode failed: {0}")]
    Encode(String),
    #[error("label line {line}: {msg}")]
    Label { line: usize, msg: String },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("not enough images: {0}")]
    TooFew(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
