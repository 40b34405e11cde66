use anyhow::Context;
use lumendet::arch::{ModelConfig, Model, Variant};
use lumendet::data::{Manifest, Split};
use lumendet::infer::load_prepared;
use lumendet::tensor::write_checkpoint;
use lumendet::train::{fit, log_csv, parse_run_config, TrainConfig};

use super::{check_size, require, write};
use crate::{CliError, TrainArgs};

/// Model and training configs after applying command-line overrides.
pub fn effective_config(a: &TrainArgs) -> Result<(TrainConfig, ModelConfig), CliError> {
    let (mut cfg, model) = match &a.config {
        Some(path) => {
            require(path, "config file")?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_run_config(&text)?
        }
        None => (TrainConfig::default(), ModelConfig::default()),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        cfg.epochs = epochs;
    }
    if let Some(size) = a.size {
        check_size(size)?;
        cfg.image_size = size;
    }
    cfg.validate()?;
    Ok((cfg, model.with_variant(Variant::from(a.variant))))
}

pub fn run(a: &TrainArgs) -> Result<(), CliError> {
    let (cfg, model_cfg) = effective_config(a)?;
    let manifests = [Split::Train, Split::Val].map(|s| a.data.join(format!("{s}.tsv")));
    for m in &manifests {
        require(m, "manifest")?;
    }
    let train = load_prepared(&Manifest::load(&manifests[0])?, cfg.image_size, cfg.image_size)?;
    let val = load_prepared(&Manifest::load(&manifests[1])?, cfg.image_size, cfg.image_size)?;
    let mut model = Model::new(model_cfg, cfg.seed)?;
    log::info!(
        "training {} ({} params) on {} images, validating on {}",
        model.config().variant(),
        model.num_params(),
        train.len(),
        val.len()
    );
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let outcome = fit(&mut model, &train, &val, &cfg, |_| {})?;
    write(&a.out.join("log.csv"), log_csv(&outcome.log))?;
    write_checkpoint(&a.out.join("best.ckpt"), &outcome.best)?;
    write_checkpoint(&a.out.join("last.ckpt"), &outcome.last)?;
    let best = &outcome.log[outcome.best_epoch - 1];
    println!(
        "{}\tparams {}\tbest epoch {}\tval mAP@0.5 {:.3}\tval mAP@0.5:0.95 {:.3}",
        model.config().variant(),
        model.num_params(),
        outcome.best_epoch,
        best.val_map50,
        best.val_map5095
    );
    Ok(())
}
