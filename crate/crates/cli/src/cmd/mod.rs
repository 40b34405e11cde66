//! One module per subcommand plus shared loading helpers.

pub mod ablate;
pub mod bench;
pub mod detect;
pub mod eval;
pub mod generate;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::Context;
use lumendet::arch::{Model, MAX_STRIDE};
use lumendet::data::is_supported_image;
use lumendet::tensor::read_checkpoint;
use lumendet::train::{TrainConfig, TRAIN_CONFIG_KEY};

use crate::CliError;

/// Input size used when neither the flag nor the checkpoint names one.
pub const FALLBACK_SIZE: usize = 160;

pub(crate) fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} `{}` does not exist", path.display())))
    }
}

pub(crate) fn check_size(size: usize) -> Result<(), CliError> {
    if size == 0 || size % MAX_STRIDE != 0 {
        return Err(CliError::Usage(format!(
            "input size {size} must be a positive multiple of {MAX_STRIDE}"
        )));
    }
    Ok(())
}

/// A checkpoint's model and, when present, its training config.
pub(crate) fn load_model(path: &Path) -> Result<(Model, Option<TrainConfig>), CliError> {
    require(path, "checkpoint")?;
    let ck = read_checkpoint(path)?;
    let model = Model::from_checkpoint(&ck)?;
    let cfg = ck.meta(TRAIN_CONFIG_KEY).map(TrainConfig::from_text).transpose()?;
    Ok((model, cfg))
}

/// `flag`, else the training size recorded in the checkpoint, else 160.
pub(crate) fn resolve_size(flag: Option<usize>, cfg: Option<&TrainConfig>) -> Result<usize, CliError> {
    let size = flag
        .or(cfg.map(|c| c.image_size))
        .unwrap_or(FALLBACK_SIZE);
    check_size(size)?;
    Ok(size)
}

/// Supported image files in `dir`, sorted by file name.
pub(crate) fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    require(dir, "frames directory")?;
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_supported_image(p))
        .collect();
    frames.sort();
    Ok(frames)
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub(crate) fn frame_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}
