use serde::Serialize;

use crate::data::{load_batch, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};
use crate::train::cross_entropy;

/// Binary confusion counts; class 1 is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, label: usize, predicted: usize) {
        match (label == 1, predicted == 1) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cm = Self::default();
        for (label, predicted) in pairs {
            cm.record(label, predicted);
        }
        cm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub loss: Option<f64>,
    /// Metrics whose denominator was zero and were reported as 0.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<&'static str>,
}

fn ratio(num: u64, den: u64, name: &'static str, undefined: &mut Vec<&'static str>) -> f64 {
    if den == 0 {
        undefined.push(name);
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics_from_cm(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let mut undefined = Vec::new();
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    let precision = ratio(cm.tp, cm.tp + cm.fp, "precision", &mut undefined);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, "recall", &mut undefined);
    let f1 = if precision + recall == 0.0 {
        undefined.push("f1");
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    for name in &undefined {
        log::debug!("{name} is undefined (zero denominator); reporting 0");
    }
    Ok(MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        loss: None,
        undefined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub index: usize,
    pub name: String,
    pub label: usize,
    pub predicted: usize,
    /// Softmax probabilities.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<Prediction>,
    /// Samples that could not be read.
    pub skipped: usize,
}

/// Index of the largest value; the first one wins on exact ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode pass over the whole dataset in index order. The loss is mean
/// cross-entropy without any penalty term.
pub fn evaluate(net: &mut Network<f32>, ds: &dyn Dataset, batch_size: usize) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let classes = net.output_width();
    let mut predictions = Vec::with_capacity(ds.len());
    let mut loss_sum = 0.0;
    let mut skipped = 0;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = load_batch(ds, chunk)?;
        skipped += batch.skipped.len();
        let Some(inputs) = batch.inputs else { continue };
        if let Some(&bad) = batch.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} does not fit a {classes}-way head")));
        }
        let logits = net.forward(&inputs, Mode::Eval)?;
        let (loss, _) = cross_entropy(&logits, &batch.labels)?;
        loss_sum += loss * batch.labels.len() as f64;
        let probs = crate::train::softmax(&logits)?;
        for (row, ((&i, &label), p)) in logits
            .data()
            .chunks_exact(classes)
            .zip(batch.indices.iter().zip(&batch.labels).zip(probs.data().chunks_exact(classes)))
        {
            predictions.push(Prediction {
                index: i,
                name: ds.name(i),
                label,
                predicted: argmax(row),
                scores: p.iter().map(|&v| v as f64).collect(),
            });
        }
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument(format!("none of the {} samples could be read", ds.len())));
    }
    let confusion = ConfusionMatrix::from_pairs(predictions.iter().map(|p| (p.label, p.predicted)));
    let mut metrics = metrics_from_cm(&confusion)?;
    metrics.loss = Some(loss_sum / predictions.len() as f64);
    Ok(Evaluation {
        metrics,
        confusion,
        predictions,
        skipped,
    })
}
