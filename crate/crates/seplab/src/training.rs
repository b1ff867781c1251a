//! Epoch loop: shuffling, batched steps, validation, best-model tracking and
//! early stopping.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use seplab_core::models::SeparationModel;
use seplab_core::rng;
use seplab_core::train::{loss_and_grads, reduce, validation_loss, EarlyStopping, StopDecision, TrainConfig, TrainExample, Trainer};

use crate::error::{Error, Result};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_time_s: f64,
    pub steps: u64,
    /// Best epoch so far, this one included.
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub best: SeparationModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Mean loss and gradients of `batch`. Examples may run in parallel; the
/// reduction is always in batch order.
pub fn batch_grads(trainer: &Trainer, batch: &[&TrainExample]) -> Result<(f64, seplab_core::params::Grads)> {
    let model = &trainer.model;
    let weight = trainer.config.a2t_weight;
    let parts = batch
        .par_iter()
        .map(|ex| loss_and_grads(model, &model.store, ex, weight).map(|(r, g)| (r.total, g)))
        .collect::<seplab_core::Result<Vec<_>>>()?;
    Ok(reduce(&model.store, parts))
}

/// Mean validation loss, evaluated in parallel and summed in order.
pub fn mean_validation_loss(model: &SeparationModel, valid: &[TrainExample]) -> Result<f64> {
    if valid.is_empty() {
        return Err(seplab_core::Error::InvalidInput("validation set is empty".into()).into());
    }
    let losses = valid
        .par_iter()
        .map(|ex| validation_loss(model, std::slice::from_ref(ex)))
        .collect::<seplab_core::Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains until `max_epochs` or early stopping. `on_epoch` sees every log
/// line together with the current best model.
pub fn train(
    model: SeparationModel,
    train_set: &[TrainExample],
    valid_set: &[TrainExample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &SeparationModel) -> Result<()>,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(seplab_core::Error::InvalidInput("training set is empty".into()).into());
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = trainer.model.clone();
    let mut log = Vec::new();
    let mut stopped_early = false;
    let start = Instant::now();

    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::rng_for(config.seed, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_grads(&trainer, &batch)?;
            trainer.apply(grads, loss, epoch, bi)?;
            loss_sum += loss;
            batches += 1;
        }
        let val_loss = mean_validation_loss(&trainer.model, valid_set)?;
        let decision = stopper.update(epoch, val_loss);
        if decision == StopDecision::Improved {
            best = trainer.model.clone();
        }
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            lr: config.lr(epoch),
            wall_time_s: start.elapsed().as_secs_f64(),
            steps: trainer.steps(),
            best_epoch: stopper.best_epoch.unwrap_or(epoch),
        };
        log::info!("epoch {epoch}: train {:.3} valid {:.3} lr {:.3e}", entry.train_loss, val_loss, entry.lr);
        on_epoch(&entry, &best)?;
        log.push(entry);
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    let best_epoch = stopper.best_epoch.unwrap_or(0);
    Ok(TrainOutcome { best, log, best_epoch, stopped_early })
}

pub fn append_log(path: &Path, entry: &EpochLog) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_vec(entry).map_err(|e| Error::format(path, e))?;
    line.push(b'\n');
    f.write_all(&line).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e)))
        .collect()
}
