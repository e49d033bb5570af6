use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::augment::{augment, RECIPE_COUNT};
use super::image::load_image;
use super::manifest::{resolve, write_manifest, SampleRecord};
use crate::error::Result;
use crate::rng::{mix_seed, str_hash};

#[derive(Debug, Clone, Default)]
pub struct PrepareReport {
    pub records: Vec<SampleRecord>,
    /// `(path, reason)` for every source that could not be decoded.
    pub failures: Vec<(String, String)>,
}

fn file_stem(origin: &str) -> String {
    origin
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes each source image plus its thirteen augmentations as PNG under
/// `out_dir/images` and the expanded manifest as `out_dir/manifest.csv`.
/// Paths in the output manifest are relative to `out_dir`.
pub fn prepare_dataset(sources: &[SampleRecord], source_base: &Path, out_dir: &Path, seed: u64) -> Result<PrepareReport> {
    let images = out_dir.join("images");
    fs::create_dir_all(&images)?;

    let results: Vec<Result<Vec<SampleRecord>>> = sources
        .par_iter()
        .enumerate()
        .map(|(idx, src)| {
            let img = load_image(&resolve(source_base, &src.path))?;
            let origin = if src.origin.is_empty() {
                Path::new(&src.path)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("source{idx}"))
            } else {
                src.origin.clone()
            };
            let noise_seed = mix_seed(&[seed, str_hash(&origin)]);
            let stem = format!("{}_{idx:05}", file_stem(&origin));
            let mut rows = Vec::with_capacity(RECIPE_COUNT as usize + 1);
            for recipe in 0..=RECIPE_COUNT {
                let out = if recipe == 0 { img.clone() } else { augment(&img, recipe, noise_seed)? };
                let rel = format!("images/{stem}_r{recipe:02}.png");
                out.save_png(&out_dir.join(&rel))?;
                rows.push(SampleRecord {
                    path: rel,
                    label: src.label,
                    origin: origin.clone(),
                    recipe,
                });
            }
            Ok(rows)
        })
        .collect();

    let mut report = PrepareReport::default();
    let mut groups = Vec::new();
    for (src, res) in sources.iter().zip(results) {
        match res {
            Ok(rows) => groups.push(rows),
            Err(e) if e.is_io() => return Err(e),
            Err(e) => {
                log::warn!("skipping {}: {e}", src.path);
                report.failures.push((src.path.clone(), e.to_string()));
            }
        }
    }
    groups.sort_by(|a, b| a[0].origin.cmp(&b[0].origin));
    report.records = groups.into_iter().flatten().collect();
    write_manifest(&out_dir.join("manifest.csv"), &report.records)?;
    Ok(report)
}
