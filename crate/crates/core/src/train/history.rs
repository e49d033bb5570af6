use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HISTORY_HEADER: [&str; 9] = [
    "epoch",
    "train_loss",
    "train_acc",
    "val_loss",
    "val_acc",
    "precision",
    "recall",
    "f1",
    "seconds",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub seconds: f64,
}

pub fn write_history(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(HISTORY_HEADER)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != HISTORY_HEADER {
        return Err(Error::Csv {
            line: 1,
            reason: format!("expected header `{}`", HISTORY_HEADER.join(",")),
        });
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Csv {
                line: i as u64 + 2,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let rec = EpochRecord {
            epoch: 1,
            train_loss: 0.421337,
            train_acc: 0.5,
            val_loss: 0.1 + 0.2,
            val_acc: 1.0,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            seconds: 0.0,
        };
        write_history(&p, std::slice::from_ref(&rec)).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,precision,recall,f1,seconds\n"));
        assert_eq!(read_history(&p).unwrap(), [rec]);
    }
}
