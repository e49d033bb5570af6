use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::history::EpochRecord;
use super::run::{train, TrainOptions, TrainOutcome};
use crate::arch::ModelConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Lr,
    Batch,
    Epochs,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Lr => "lr",
            SweepAxis::Batch => "batch",
            SweepAxis::Epochs => "epochs",
        }
    }

    /// Grid used when no values are given.
    pub fn default_values(&self) -> Vec<f64> {
        match self {
            SweepAxis::Lr => vec![1e-3, 1e-4, 1e-5],
            SweepAxis::Batch => vec![8.0, 16.0, 32.0],
            SweepAxis::Epochs => vec![30.0, 50.0, 70.0],
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(&self, base: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let count = |field: &str| {
            if value >= 1.0 && value.fract() == 0.0 && value.is_finite() {
                Ok(value as usize)
            } else {
                Err(Error::config(field, format!("sweep value {value} is not a positive integer")))
            }
        };
        let mut cfg = base.clone();
        match self {
            SweepAxis::Lr => cfg.learning_rate = value,
            SweepAxis::Batch => cfg.batch_size = count("batch_size")?,
            SweepAxis::Epochs => cfg.epochs = count("epochs")?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(SweepAxis::Lr),
            "batch" => Ok(SweepAxis::Batch),
            "epochs" => Ok(SweepAxis::Epochs),
            other => Err(Error::config("axis", format!("expected lr, batch or epochs, got `{other}`"))),
        }
    }
}

#[derive(Debug)]
pub struct SweepRun {
    pub value: f64,
    pub outcome: std::result::Result<TrainOutcome, String>,
}

/// Long-format row of the sweep table. Failed runs get one row with empty metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub epoch: Option<usize>,
    pub train_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub seconds: Option<f64>,
    pub status: String,
}

impl SweepRow {
    fn from_record(axis: SweepAxis, value: f64, r: &EpochRecord) -> Self {
        Self {
            axis: axis.name().into(),
            value,
            epoch: Some(r.epoch),
            train_loss: Some(r.train_loss),
            train_acc: Some(r.train_acc),
            val_loss: Some(r.val_loss),
            val_acc: Some(r.val_acc),
            precision: Some(r.precision),
            recall: Some(r.recall),
            f1: Some(r.f1),
            seconds: Some(r.seconds),
            status: "ok".into(),
        }
    }
}

pub fn sweep_rows(axis: SweepAxis, runs: &[SweepRun]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for run in runs {
        match &run.outcome {
            Ok(o) => rows.extend(o.history.iter().map(|r| SweepRow::from_record(axis, run.value, r))),
            Err(msg) => rows.push(SweepRow {
                axis: axis.name().into(),
                value: run.value,
                epoch: None,
                train_loss: None,
                train_acc: None,
                val_loss: None,
                val_acc: None,
                precision: None,
                recall: None,
                f1: None,
                seconds: None,
                status: format!("failed: {msg}"),
            }),
        }
    }
    rows
}

/// Trains once per value of `axis` (others fixed, same seed), each run in
/// `out_dir/{axis}_{value}`, and writes the combined table to `out_dir/sweep.csv`.
/// A failing run is recorded and the rest continue.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    model: &ModelConfig,
    base: &TrainConfig,
    axis: SweepAxis,
    values: &[f64],
    train_set: &dyn Dataset,
    val_set: &dyn Dataset,
    out_dir: &Path,
    record_seconds: bool,
) -> Result<Vec<SweepRun>> {
    if values.is_empty() {
        return Err(Error::config("values", "sweep needs at least one value"));
    }
    std::fs::create_dir_all(out_dir)?;
    let runs: Vec<SweepRun> = values
        .par_iter()
        .map(|&value| {
            let outcome = axis.apply(base, value).and_then(|cfg| {
                let opts = TrainOptions {
                    out_dir: Some(out_dir.join(format!("{}_{value}", axis.name()))),
                    record_seconds,
                };
                train(model, &cfg, train_set, val_set, &opts).map(|(_, o)| o)
            });
            if let Err(e) = &outcome {
                log::warn!("{axis}={value} failed: {e}");
            }
            SweepRun {
                value,
                outcome: outcome.map_err(|e| e.to_string()),
            }
        })
        .collect();
    let mut w = csv::Writer::from_path(out_dir.join("sweep.csv"))?;
    for row in sweep_rows(axis, &runs) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_axes() {
        let base = TrainConfig::default();
        assert_eq!(SweepAxis::Lr.apply(&base, 1e-3).unwrap().learning_rate, 1e-3);
        assert_eq!(SweepAxis::Batch.apply(&base, 8.0).unwrap().batch_size, 8);
        assert!(SweepAxis::Batch.apply(&base, 2.5).is_err());
        assert!(SweepAxis::Lr.apply(&base, 0.0).is_err());
        assert_eq!("epochs".parse::<SweepAxis>().unwrap(), SweepAxis::Epochs);
        assert!("momentum".parse::<SweepAxis>().is_err());
    }
}
