use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::image::decode_and_normalize;
use super::manifest::{read_manifest, resolve, SampleRecord};
use crate::error::{Error, Result};
use crate::rng::{rng_for, str_hash};
use crate::tensor::Tensor;

/// Indexed source of normalized `3×S×S` samples with binary labels.
pub trait Dataset: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, index: usize) -> usize;

    fn load(&self, index: usize) -> Result<Tensor<f32>>;

    /// Human-readable identifier of a sample (a file path for manifest data).
    fn name(&self, index: usize) -> String {
        format!("#{index}")
    }
}

pub struct InMemoryDataset {
    samples: Vec<Tensor<f32>>,
    labels: Vec<usize>,
}

impl InMemoryDataset {
    pub fn new(samples: Vec<Tensor<f32>>, labels: Vec<usize>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        Ok(Self { samples, labels })
    }
}

impl Dataset for InMemoryDataset {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn load(&self, index: usize) -> Result<Tensor<f32>> {
        Ok(self.samples[index].clone())
    }
}

/// Samples listed in a manifest, decoded and resized on demand.
pub struct ManifestDataset {
    pub records: Vec<SampleRecord>,
    base: PathBuf,
    size: usize,
}

impl ManifestDataset {
    pub fn new(records: Vec<SampleRecord>, base: impl Into<PathBuf>, size: usize) -> Self {
        Self {
            records,
            base: base.into(),
            size,
        }
    }

    /// Reads `path`; relative image paths resolve against the manifest's directory.
    pub fn open(path: &Path, size: usize) -> Result<Self> {
        let records = read_manifest(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::new(records, base, size))
    }
}

impl Dataset for ManifestDataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn label(&self, index: usize) -> usize {
        self.records[index].label as usize
    }

    fn load(&self, index: usize) -> Result<Tensor<f32>> {
        decode_and_normalize(&resolve(&self.base, &self.records[index].path), self.size)
    }

    fn name(&self, index: usize) -> String {
        self.records[index].path.clone()
    }
}

/// Sample indices grouped into batches, shuffled per `(seed, epoch)`. The last batch
/// may be partial.
pub fn batch_order(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be ≥ 1");
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng_for(&[seed, str_hash("batches"), epoch]));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// A stacked batch. Samples that failed to load are left out and listed in `skipped`.
pub struct Batch {
    pub inputs: Option<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
    pub skipped: Vec<(usize, Error)>,
}

/// Loads the listed samples (in parallel, order preserved) and stacks them on a new
/// leading axis. I/O failures abort; undecodable samples are skipped.
pub fn load_batch(ds: &dyn Dataset, indices: &[usize]) -> Result<Batch> {
    let loaded: Vec<(usize, Result<Tensor<f32>>)> = indices.par_iter().map(|&i| (i, ds.load(i))).collect();
    let mut data = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    let mut batch = Batch {
        inputs: None,
        labels: Vec::new(),
        indices: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, res) in loaded {
        match res {
            Ok(t) => {
                match &shape {
                    Some(s) if s != t.shape() => {
                        return Err(Error::shape(
                            "batch",
                            format!("sample {} has shape {:?}, expected {s:?}", ds.name(i), t.shape()),
                        ))
                    }
                    Some(_) => {}
                    None => shape = Some(t.shape().to_vec()),
                }
                data.extend_from_slice(t.data());
                batch.labels.push(ds.label(i));
                batch.indices.push(i);
            }
            Err(e @ Error::Ingest { .. }) => {
                log::warn!("skipping sample {}: {e}", ds.name(i));
                batch.skipped.push((i, e));
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(s) = shape {
        let mut full = vec![batch.indices.len()];
        full.extend(s);
        batch.inputs = Some(Tensor::new(full, data)?);
    }
    Ok(batch)
}
