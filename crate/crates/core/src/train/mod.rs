//! Objective, optimizer, training loop, early stopping and the sensitivity sweep.

mod config;
mod early;
mod history;
pub mod loss;
mod optim;
mod run;
mod sweep;

pub use config::TrainConfig;
pub use early::{drive_epochs, EarlyStopping, EpochRunner, ScriptedLosses, StopDecision};
pub use history::{read_history, write_history, EpochRecord, HISTORY_HEADER};
pub use loss::{cross_entropy, l2_penalty, l2_value, softmax, LossBreakdown};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use run::{train, StepStats, TrainOptions, TrainOutcome, Trainer};
pub use sweep::{sweep, sweep_rows, SweepAxis, SweepRow, SweepRun};
