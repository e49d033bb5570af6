use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;

use super::manifest::SampleRecord;
use crate::error::{Error, Result};
use crate::rng::{rng_for, str_hash};

/// Stratified, origin-disjoint split. For each class, `round(origins / denominator)`
/// origins (with every row derived from them) go to the test side; which ones is
/// decided by a shuffle keyed on `seed`. Row order of the input is preserved on both sides.
pub fn split(records: &[SampleRecord], denominator: usize, seed: u64) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty manifest".into()));
    }
    if denominator < 2 {
        return Err(Error::InvalidArgument(format!("split denominator must be ≥ 2, got {denominator}")));
    }
    let mut origins: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for r in records {
        if seen.insert((r.label, r.origin.as_str())) {
            origins.entry(r.label).or_default().push(&r.origin);
        }
    }
    let mut owner = BTreeMap::new();
    for r in records {
        if let Some(label) = owner.insert(r.origin.as_str(), r.label) {
            if label != r.label {
                return Err(Error::InvalidArgument(format!(
                    "origin `{}` appears with labels {label} and {}",
                    r.origin, r.label
                )));
            }
        }
    }

    let mut test_origins = HashSet::new();
    for (label, mut list) in origins {
        if list.len() < denominator {
            log::warn!(
                "class {label} has only {} origins; the test side may receive none of it",
                list.len()
            );
        }
        list.sort_unstable();
        list.shuffle(&mut rng_for(&[seed, str_hash("split"), label as u64]));
        let take = (list.len() as f64 / denominator as f64).round() as usize;
        test_origins.extend(list.into_iter().take(take));
    }
    let (test, train): (Vec<_>, Vec<_>) = records.iter().cloned().partition(|r| test_origins.contains(r.origin.as_str()));
    Ok((train, test))
}
