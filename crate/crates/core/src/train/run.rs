use std::path::PathBuf;
use std::time::Instant;

use serde_json::json;

use super::config::TrainConfig;
use super::early::{drive_epochs, EarlyStopping, EpochRunner, StopDecision};
use super::history::{write_history, EpochRecord};
use super::loss::{cross_entropy, l2_penalty, LossBreakdown};
use super::optim::{adam_step, AdamConfig, AdamState};
use crate::arch::{build_model, Init, ModelConfig};
use crate::data::{batch_order, load_batch, Dataset};
use crate::error::{Error, Result};
use crate::eval::{argmax, evaluate};
use crate::nn::{save_checkpoint, Mode, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: LossBreakdown,
    pub correct: usize,
    pub samples: usize,
}

/// A model with its optimizer state.
pub struct Trainer {
    pub net: Network<f32>,
    pub adam: AdamState<f32>,
    pub model: ModelConfig,
    pub config: TrainConfig,
}

impl Trainer {
    /// Builds the model with seeded initialization from `config.seed`.
    pub fn new(model: &ModelConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = build_model::<f32>(model, Init::Seeded(config.seed))?;
        let adam = AdamState::new(&net);
        Ok(Self {
            net,
            adam,
            model: model.clone(),
            config: config.clone(),
        })
    }

    fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.config.learning_rate,
            beta1: self.config.beta1,
            beta2: self.config.beta2,
            eps: self.config.eps,
        }
    }

    /// One optimizer step on a batch: forward, cross-entropy (+ weighted auxiliary
    /// loss), backward, L2 penalty gradient, Adam update.
    pub fn step(&mut self, inputs: &Tensor<f32>, labels: &[usize]) -> Result<StepStats> {
        self.net.set_step(self.adam.t);
        self.net.zero_grad();
        let logits = self.net.forward(inputs, Mode::Train)?;
        let (mut data, dlogits) = cross_entropy(&logits, labels)?;
        if let Some(aux) = self.net.aux_output().cloned() {
            let w = self.config.aux_loss_weight;
            let (aux_loss, daux) = cross_entropy(&aux, labels)?;
            data += w * aux_loss;
            self.net.set_aux_upstream(daux.scale(w as f32))?;
        }
        self.net.backward(&dlogits)?;
        let penalty = l2_penalty(&mut self.net, self.config.lambda_l2)?;
        let adam = self.adam_config();
        adam_step(&mut self.adam, &mut self.net, &adam)?;
        let k = logits.shape()[1];
        let correct = logits
            .data()
            .chunks_exact(k)
            .zip(labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        Ok(StepStats {
            loss: LossBreakdown::new(data, penalty),
            correct,
            samples: labels.len(),
        })
    }

    /// One pass over `ds` in the seeded order for `epoch`. Returns mean total loss,
    /// accuracy, and the number of unreadable samples.
    pub fn train_epoch(&mut self, ds: &dyn Dataset, epoch: u64) -> Result<(f64, f64, usize)> {
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut seen = 0;
        let mut skipped = 0;
        for idx in batch_order(ds.len(), self.config.batch_size, self.config.seed, epoch) {
            let batch = load_batch(ds, &idx)?;
            skipped += batch.skipped.len();
            let Some(inputs) = batch.inputs else { continue };
            let s = self.step(&inputs, &batch.labels)?;
            loss_sum += s.loss.total * s.samples as f64;
            correct += s.correct;
            seen += s.samples;
        }
        if seen == 0 {
            return Err(Error::InvalidArgument("no training sample could be read".into()));
        }
        Ok((loss_sum / seen as f64, correct as f64 / seen as f64, skipped))
    }

    pub fn checkpoint_metadata(&self, epoch: usize, val_loss: f64) -> serde_json::Value {
        json!({
            "model": self.model,
            "train": self.config,
            "epoch": epoch,
            "val_loss": val_loss,
            "optimizer": {
                "kind": "adam",
                "t": self.adam.t,
                "learning_rate": self.config.learning_rate,
                "beta1": self.config.beta1,
                "beta2": self.config.beta2,
                "eps": self.config.eps,
            },
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where `history.csv`, `best.ckpt` and `last.ckpt` go; nothing is written if unset.
    pub out_dir: Option<PathBuf>,
    /// Record wall-clock seconds per epoch. Off by default so histories are
    /// byte-reproducible; the column then holds 0.
    pub record_seconds: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub steps: u64,
    pub skipped_train: usize,
    pub skipped_val: usize,
    /// Σθ² over regularizable parameters after the last step.
    pub final_sum_squares: f64,
}

struct TrainLoop<'a> {
    trainer: Trainer,
    train_set: &'a dyn Dataset,
    val_set: &'a dyn Dataset,
    opts: &'a TrainOptions,
    history: Vec<EpochRecord>,
    skipped_train: usize,
    skipped_val: usize,
    last_val: f64,
}

impl EpochRunner for TrainLoop<'_> {
    fn run_epoch(&mut self, epoch: usize) -> Result<f64> {
        let start = Instant::now();
        let (train_loss, train_acc, skipped) = self.trainer.train_epoch(self.train_set, epoch as u64 - 1)?;
        self.skipped_train += skipped;
        let eval = evaluate(&mut self.trainer.net, self.val_set, self.trainer.config.batch_size)?;
        self.skipped_val += eval.skipped;
        let val_loss = eval.metrics.loss.unwrap_or(f64::NAN);
        let seconds = if self.opts.record_seconds { start.elapsed().as_secs_f64() } else { 0.0 };
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.4} train_acc {train_acc:.4} val_loss {val_loss:.4} val_acc {:.4}",
            eval.metrics.accuracy
        );
        self.history.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc: eval.metrics.accuracy,
            precision: eval.metrics.precision,
            recall: eval.metrics.recall,
            f1: eval.metrics.f1,
            seconds,
        });
        self.last_val = val_loss;
        Ok(val_loss)
    }

    fn after_epoch(&mut self, epoch: usize, decision: StopDecision) -> Result<()> {
        let Some(dir) = &self.opts.out_dir else { return Ok(()) };
        write_history(&dir.join("history.csv"), &self.history)?;
        let meta = self.trainer.checkpoint_metadata(epoch, self.last_val);
        if decision.improved {
            save_checkpoint(&self.trainer.net, meta.clone(), &dir.join("best.ckpt"))?;
        }
        save_checkpoint(&self.trainer.net, meta, &dir.join("last.ckpt"))
    }
}

/// Full training run with per-epoch validation and early stopping on validation loss.
pub fn train(
    model: &ModelConfig,
    config: &TrainConfig,
    train_set: &dyn Dataset,
    val_set: &dyn Dataset,
    opts: &TrainOptions,
) -> Result<(Trainer, TrainOutcome)> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    let trainer = Trainer::new(model, config)?;
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut run = TrainLoop {
        trainer,
        train_set,
        val_set,
        opts,
        history: Vec::new(),
        skipped_train: 0,
        skipped_val: 0,
        last_val: f64::NAN,
    };
    let mut stopper = EarlyStopping::new(config.early_stop_patience, config.early_stop_min_delta);
    let ran = drive_epochs(&mut stopper, config.epochs, &mut run)?;
    if stopper.stale >= config.early_stop_patience {
        log::info!("early stop after epoch {ran}: no improvement for {} epochs", config.early_stop_patience);
    }
    let TrainLoop {
        trainer,
        history,
        skipped_train,
        skipped_val,
        ..
    } = run;

    let outcome = TrainOutcome {
        stopped_early: stopper.stale >= config.early_stop_patience,
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best,
        steps: trainer.adam.t,
        skipped_train,
        skipped_val,
        final_sum_squares: trainer.net.regularizable_sum_squares(),
        history,
    };
    Ok((trainer, outcome))
}
