//! Training driver: config files, CSV histories and checkpoints.

use std::path::{Path, PathBuf};

use partcount_core::dataset::{Bucket, DatasetSplit};
use partcount_core::net::{CountingNet, NetConfig};
use partcount_core::train::{train, TrainConfig, TrainOutcome};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::save_checkpoint;
use crate::data::{bucket_ids, DiskSource};
use crate::error::{Error, Result};
use crate::io::atomic_write;

/// `train.toml` contents; every key is optional and falls back to the
/// [`TrainConfig`] default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub image_size: Option<usize>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub grad_clip: Option<f64>,
    pub warmup_steps: Option<usize>,
}

impl TrainFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Values from `overrides` win over values from `self`.
    pub fn merged(&self, overrides: &TrainFile) -> TrainFile {
        TrainFile {
            learning_rate: overrides.learning_rate.or(self.learning_rate),
            epochs: overrides.epochs.or(self.epochs),
            seed: overrides.seed.or(self.seed),
            lambda: overrides.lambda.or(self.lambda),
            image_size: overrides.image_size.or(self.image_size),
            beta1: overrides.beta1.or(self.beta1),
            beta2: overrides.beta2.or(self.beta2),
            epsilon: overrides.epsilon.or(self.epsilon),
            grad_clip: overrides.grad_clip.or(self.grad_clip),
            warmup_steps: overrides.warmup_steps.or(self.warmup_steps),
        }
    }

    pub fn resolve(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed.unwrap_or(d.seed),
            lambda: self.lambda.unwrap_or(d.lambda),
            image_size: self.image_size.unwrap_or(d.image_size),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            grad_clip: self.grad_clip.or(d.grad_clip),
            warmup_steps: self.warmup_steps.unwrap_or(d.warmup_steps),
        }
    }
}

fn config_json(c: &TrainConfig) -> serde_json::Value {
    json!({
        "learning_rate": c.learning_rate,
        "epochs": c.epochs,
        "seed": c.seed,
        "lambda": c.lambda,
        "image_size": c.image_size,
        "beta1": c.beta1,
        "beta2": c.beta2,
        "epsilon": c.epsilon,
        "grad_clip": c.grad_clip,
        "warmup_steps": c.warmup_steps,
    })
}

pub fn loss_history_csv(outcome: &TrainOutcome) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(["epoch", "iter", "image_id", "mse", "mismatch_soft", "mismatch_hard", "combined"])
        .map_err(csv_err)?;
    for r in &outcome.history {
        w.write_record([
            r.epoch.to_string(),
            r.iter.to_string(),
            r.image_id.to_string(),
            r.loss.mse.to_string(),
            r.loss.mismatch_soft.to_string(),
            r.loss.mismatch_hard.to_string(),
            r.loss.combined.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

pub fn epochs_csv(outcome: &TrainOutcome) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(["epoch", "mean_combined", "dev_mae"]).map_err(csv_err)?;
    for e in &outcome.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.mean_combined.to_string(),
            e.dev_mae.map(|m| m.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

/// Files written by [`run_training`].
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub loss_history: PathBuf,
    pub epochs: PathBuf,
    pub best: PathBuf,
    pub final_checkpoint: PathBuf,
    pub outcome: TrainOutcome,
}

/// Trains on the split's train scenes, selecting on its dev scenes, and
/// writes `loss_history.csv`, `epochs.csv`, `best.ckpt` and `final.ckpt`
/// into `out_dir`.
pub fn run_training(
    source: &mut DiskSource,
    split: &DatasetSplit,
    config: &TrainConfig,
    net_config: NetConfig,
    out_dir: impl AsRef<Path>,
) -> Result<TrainArtifacts> {
    let out_dir = out_dir.as_ref();
    let records = source.dataset().records.clone();
    let train_ids = bucket_ids(split, Bucket::Train, &records);
    let dev_ids = bucket_ids(split, Bucket::Dev, &records);
    let net = CountingNet::<f32>::new(net_config)?;
    log::info!("training on {} images, validating on {}", train_ids.len(), dev_ids.len());
    let outcome = train(net, &train_ids, &dev_ids, source, config)?;

    let loss_history = out_dir.join("loss_history.csv");
    atomic_write(&loss_history, &loss_history_csv(&outcome)?)?;
    let epochs = out_dir.join("epochs.csv");
    atomic_write(&epochs, &epochs_csv(&outcome)?)?;
    let final_epoch = outcome.epochs.last().expect("at least one epoch");
    let best_epoch = &outcome.epochs[outcome.best_epoch];
    let best = out_dir.join("best.ckpt");
    save_checkpoint(
        &best,
        &outcome.best_net,
        json!({"config": config_json(config), "epoch": best_epoch.epoch, "dev_mae": best_epoch.dev_mae, "split_seed": split.seed}),
    )?;
    let final_checkpoint = out_dir.join("final.ckpt");
    save_checkpoint(
        &final_checkpoint,
        &outcome.final_net,
        json!({"config": config_json(config), "epoch": final_epoch.epoch, "dev_mae": final_epoch.dev_mae, "split_seed": split.seed}),
    )?;
    Ok(TrainArtifacts { loss_history, epochs, best, final_checkpoint, outcome })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_values_override_file_values() {
        let file = TrainFile::parse("lambda = 0.0\nepochs = 3\n").unwrap();
        let cli = TrainFile { lambda: Some(1e-9), ..TrainFile::default() };
        let c = file.merged(&cli).resolve();
        assert_eq!(c.lambda, 1e-9);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.learning_rate, 1e-5);
        assert_eq!(c.image_size, 384);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = TrainFile::parse("learning_rat = 1.0\n").unwrap_err();
        assert_eq!(err.kind(), "config");
    }
}
