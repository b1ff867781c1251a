//! Training objective (PIT negative SNR plus optional auxiliary autoencoding),
//! early stopping and the optimizer step.

use alloc::sync::Arc;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::losses::{pit_neg_snr, snr_db, Assignment};
use crate::math::energy;
use crate::matrix::Matrix;
use crate::models::{Overrides, SeparationModel};
use crate::optim::{clip_grad_norm, lr_schedule, Adam, AdamConfig};
use crate::params::{Grads, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PitMode {
    UtterancePit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub a2t_weight: f64,
    pub pit_mode: PitMode,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            decay: 0.98,
            decay_every: 2,
            clip_norm: 5.0,
            max_epochs: 100,
            patience: 10,
            a2t_weight: 0.0,
            pit_mode: PitMode::UtterancePit,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr0", self.lr0), ("decay", self.decay), ("clip_norm", self.clip_norm)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!(Config, "train.{name} must be positive, got {v}");
            }
        }
        if self.decay_every == 0 || self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            bail!(Config, "train: decay_every, max_epochs, patience and batch_size must be positive");
        }
        if self.patience > self.max_epochs {
            bail!(Config, "train.patience ({}) exceeds max_epochs ({})", self.patience, self.max_epochs);
        }
        if !(self.a2t_weight >= 0.0 && self.a2t_weight.is_finite()) {
            bail!(Config, "train.a2t_weight must be >= 0");
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self.lr0, self.decay, self.decay_every)
    }
}

/// A mixture and its `C` reference source images.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub mixture: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
}

impl TrainExample {
    fn check(&self) -> Result<()> {
        if self.targets.is_empty() {
            bail!(InvalidInput, "example has no targets");
        }
        for t in &self.targets {
            if t.len() != self.mixture.len() {
                bail!(InvalidInput, "target length {} differs from mixture length {}", t.len(), self.mixture.len());
            }
            if energy(t) == 0.0 {
                bail!(InvalidInput, "target has zero energy");
            }
        }
        Ok(())
    }
}

/// PIT negative-SNR loss of one example, on `tape`.
pub fn separation_loss_var(
    tape: &mut Tape,
    model: &SeparationModel,
    store: &ParamStore,
    example: &TrainExample,
) -> Result<(Var, Assignment)> {
    example.check()?;
    let y = tape.leaf(Matrix::row_vector(example.mixture.clone()));
    let g = model.graph_with(tape, store, y, example.targets.len(), &Overrides::default())?;
    let refs: Vec<Arc<Matrix>> = example.targets.iter().map(|t| Arc::new(Matrix::row_vector(t.clone()))).collect();
    Ok(pit_neg_snr(tape, &g.outputs, &refs))
}

/// Auxiliary autoencoding loss: each source is fed alone and the output with
/// the highest SNR must reconstruct it. Mean over sources of `−SNR`.
pub fn a2t_loss_var(tape: &mut Tape, model: &SeparationModel, store: &ParamStore, targets: &[Vec<f64>]) -> Result<Var> {
    let c = targets.len();
    let mut terms = Vec::with_capacity(c);
    for x in targets {
        let xv = tape.leaf(Matrix::row_vector(x.clone()));
        let g = model.graph_with(tape, store, xv, c, &Overrides::default())?;
        let reference = Arc::new(Matrix::row_vector(x.clone()));
        let best = best_head(g.outputs.iter().map(|o| tape.value(*o).as_slice()), x)?;
        terms.push(tape.neg_snr(g.outputs[best], reference));
    }
    let total = tape.sum(&terms);
    Ok(tape.scale(total, 1.0 / c as f64))
}

/// Index of the highest-SNR output (first on ties).
fn best_head<'a>(outputs: impl Iterator<Item = &'a [f64]>, reference: &[f64]) -> Result<usize> {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, o) in outputs.enumerate() {
        let s = snr_db(o, reference)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

/// Value-only A2T loss given, for each source `i`, the outputs produced when
/// that source was presented alone.
pub fn a2t_loss(outputs_per_source: &[Vec<Vec<f64>>], targets: &[Vec<f64>]) -> Result<f64> {
    if outputs_per_source.len() != targets.len() || targets.is_empty() {
        bail!(InvalidInput, "a2t: {} output sets for {} targets", outputs_per_source.len(), targets.len());
    }
    let mut sum = 0.0;
    for (outs, x) in outputs_per_source.iter().zip(targets) {
        let best = best_head(outs.iter().map(|o| o.as_slice()), x)?;
        sum -= snr_db(&outs[best], x)?;
    }
    Ok(sum / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// `separation + a2t_weight · a2t`.
    pub total: f64,
    pub separation: f64,
    pub a2t: Option<f64>,
    pub assignment: Assignment,
}

/// Loss and parameter gradients of one example.
pub fn loss_and_grads(model: &SeparationModel, store: &ParamStore, example: &TrainExample, a2t_weight: f64) -> Result<(LossReport, Grads)> {
    let mut tape = Tape::new();
    let (sep, assignment) = separation_loss_var(&mut tape, model, store, example)?;
    let separation = tape.scalar(sep);
    let (total_var, a2t) = if a2t_weight > 0.0 {
        let a = a2t_loss_var(&mut tape, model, store, &example.targets)?;
        let weighted = tape.scale(a, a2t_weight);
        (tape.sum(&[sep, weighted]), Some(tape.scalar(a)))
    } else {
        (sep, None)
    };
    let total = tape.scalar(total_var);
    let grads = tape.backward(total_var).into_param_grads(store);
    Ok((LossReport { total, separation, a2t, assignment }, grads))
}

/// Validation metric: mean PIT negative SNR.
pub fn validation_loss(model: &SeparationModel, examples: &[TrainExample]) -> Result<f64> {
    if examples.is_empty() {
        bail!(InvalidInput, "validation set is empty");
    }
    let mut sum = 0.0;
    for ex in examples {
        let mut tape = Tape::new();
        let (l, _) = separation_loss_var(&mut tape, model, &model.store, ex)?;
        sum += tape.scalar(l);
    }
    Ok(sum / examples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strictly lower
/// validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: None, bad_epochs: 0 }
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            StopDecision::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Owns the model and optimizer state for one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: SeparationModel,
    pub config: TrainConfig,
    adam: Adam,
}

impl Trainer {
    pub fn new(model: SeparationModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(&model.store, AdamConfig::default());
        Ok(Trainer { model, config, adam })
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// Mean loss and gradients over `batch`, accumulated in order.
    pub fn batch_grads(&self, batch: &[TrainExample]) -> Result<(f64, Grads)> {
        let parts = batch
            .iter()
            .map(|ex| loss_and_grads(&self.model, &self.model.store, ex, self.config.a2t_weight))
            .collect::<Result<Vec<_>>>()?;
        Ok(reduce(&self.model.store, parts.into_iter().map(|(r, g)| (r.total, g))))
    }

    /// Clips and applies already-averaged gradients.
    pub fn apply(&mut self, mut grads: Grads, loss: f64, epoch: usize, batch: usize) -> Result<StepReport> {
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch });
        }
        let grad_norm = clip_grad_norm(&mut grads, self.config.clip_norm);
        let lr = self.config.lr(epoch);
        self.adam.step(&mut self.model.store, &grads, lr);
        Ok(StepReport { loss, grad_norm, lr })
    }

    pub fn step(&mut self, batch: &[TrainExample], epoch: usize, batch_index: usize) -> Result<StepReport> {
        let (loss, grads) = self.batch_grads(batch)?;
        self.apply(grads, loss, epoch, batch_index)
    }
}

/// Averages `(loss, grads)` pairs in iteration order.
pub fn reduce(store: &ParamStore, parts: impl IntoIterator<Item = (f64, Grads)>) -> (f64, Grads) {
    let mut acc = Grads::zeros_like(store);
    let mut loss = 0.0;
    let mut n = 0usize;
    for (l, g) in parts {
        loss += l;
        acc.add_assign(&g);
        n += 1;
    }
    if n > 0 {
        acc.scale(1.0 / n as f64);
        loss /= n as f64;
    }
    (loss, acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, Design, ModelConfig};
    use alloc::vec;

    #[test]
    fn patience_stops_ten_epochs_after_last_improvement() {
        let mut es = EarlyStopping::new(10);
        let mut stopped = None;
        for epoch in 0..100 {
            let loss = if epoch <= 3 { 10.0 - epoch as f64 } else { 10.0 + epoch as f64 };
            if es.update(epoch, loss) == StopDecision::Stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(es.best_epoch, Some(3));
        assert_eq!(stopped, Some(13));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { patience: 200, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr0: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { a2t_weight: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn a2t_oracle_copy_is_capped() {
        let x1 = vec![1.0, -2.0, 0.5, 0.0];
        let x2 = vec![0.0, 1.0, 1.0, -1.0];
        let outs = vec![vec![x1.clone(), vec![0.0; 4]], vec![x2.clone(), vec![0.0; 4]]];
        assert!((a2t_loss(&outs, &[x1, x2]).unwrap() + 80.0).abs() < 1e-9);
    }

    #[test]
    fn zero_a2t_weight_is_pure_separation() {
        let model = build_model(&ModelConfig::micro(Design::Mixed, 1), 0).unwrap();
        let ex = TrainExample {
            mixture: (0..64).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5).collect(),
            targets: vec![(0..64).map(|i| (i as f64 * 0.3).sin()).collect(), (0..64).map(|i| (i as f64 * 0.11).cos()).collect()],
        };
        let (r, g) = loss_and_grads(&model, &model.store, &ex, 0.0).unwrap();
        assert_eq!(r.total, r.separation);
        assert!(r.a2t.is_none());
        let mut tape = Tape::new();
        let (l, _) = separation_loss_var(&mut tape, &model, &model.store, &ex).unwrap();
        assert_eq!(tape.scalar(l), r.total);
        assert_eq!(tape.backward(l).into_param_grads(&model.store), g);
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let model = build_model(&ModelConfig::micro(Design::SimoOnly, 2), 0).unwrap();
        let mut tr = Trainer::new(model, TrainConfig::default()).unwrap();
        let g = Grads::zeros_like(&tr.model.store);
        assert_eq!(tr.apply(g, f64::NAN, 4, 7).unwrap_err(), Error::NonFiniteLoss { epoch: 4, batch: 7 });
    }

    #[test]
    fn training_steps_reduce_loss() {
        let model = build_model(&ModelConfig::micro(Design::SimoOnly, 2), 0).unwrap();
        let ex = TrainExample {
            mixture: (0..64).map(|i| (i as f64 * 0.3).sin() + (i as f64 * 1.1).cos()).collect(),
            targets: vec![(0..64).map(|i| (i as f64 * 0.3).sin()).collect(), (0..64).map(|i| (i as f64 * 1.1).cos()).collect()],
        };
        let mut tr = Trainer::new(model, TrainConfig { lr0: 1e-2, ..Default::default() }).unwrap();
        let first = tr.step(std::slice::from_ref(&ex), 0, 0).unwrap().loss;
        for b in 1..60 {
            tr.step(std::slice::from_ref(&ex), 0, b).unwrap();
        }
        let last = validation_loss(&tr.model, &[ex]).unwrap();
        assert!(last < first - 3.0, "{first} -> {last}");
        assert_eq!(tr.steps(), 60);
    }
}
