use crate::error::Result;

/// Patience-based stopping on a monitored loss. An epoch improves when its loss is
/// below `best − min_delta`.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub best_epoch: Option<usize>,
    pub stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let improved = loss < self.best - self.min_delta;
        if improved {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }
}

/// Work done once per epoch under early stopping.
pub trait EpochRunner {
    /// Runs epoch `epoch` (1-based) and returns the monitored loss.
    fn run_epoch(&mut self, epoch: usize) -> Result<f64>;

    fn after_epoch(&mut self, _epoch: usize, _decision: StopDecision) -> Result<()> {
        Ok(())
    }
}

/// Scripted losses, one per epoch; the last value repeats.
pub struct ScriptedLosses(pub Vec<f64>);

impl EpochRunner for ScriptedLosses {
    fn run_epoch(&mut self, epoch: usize) -> Result<f64> {
        let i = (epoch - 1).min(self.0.len().saturating_sub(1));
        Ok(self.0.get(i).copied().unwrap_or(f64::NAN))
    }
}

/// Runs epochs `1..=max_epochs` until the stopper says stop. Returns the number of
/// epochs run.
pub fn drive_epochs(stopper: &mut EarlyStopping, max_epochs: usize, runner: &mut dyn EpochRunner) -> Result<usize> {
    for epoch in 1..=max_epochs {
        let loss = runner.run_epoch(epoch)?;
        let d = stopper.update(epoch, loss);
        runner.after_epoch(epoch, d)?;
        if d.stop {
            return Ok(epoch);
        }
    }
    Ok(max_epochs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_improvement_then_plateau() {
        let mut s = EarlyStopping::new(10, 1e-4);
        let ran = drive_epochs(&mut s, 100, &mut ScriptedLosses(vec![1.0])).unwrap();
        assert_eq!(ran, 11);
        assert_eq!(s.best_epoch, Some(1));
    }

    #[test]
    fn small_gains_do_not_count() {
        let mut s = EarlyStopping::new(2, 0.1);
        assert!(s.update(1, 1.0).improved);
        assert!(!s.update(2, 0.95).improved);
        let d = s.update(3, 0.91);
        assert!(!d.improved && d.stop);
    }

    #[test]
    fn never_before_patience_plus_one() {
        for patience in 1..6 {
            let mut s = EarlyStopping::new(patience, 0.0);
            let ran = drive_epochs(&mut s, 50, &mut ScriptedLosses(vec![0.5, 0.7])).unwrap();
            assert_eq!(ran, patience + 1);
        }
    }
}
