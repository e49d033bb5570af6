use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["path", "label", "origin", "recipe"];

/// One manifest row. `recipe` 0 is the original image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub path: String,
    pub label: u8,
    pub origin: String,
    pub recipe: u8,
}

/// Reads a manifest, checking the header and label/recipe ranges. Line numbers in
/// errors count the header as line 1.
pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = std::fs::File::open(path)?;
    parse_manifest(file)
}

pub fn parse_manifest(reader: impl std::io::Read) -> Result<Vec<SampleRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::Csv {
            line: 1,
            reason: format!("expected header `{}`, found `{}`", MANIFEST_HEADER.join(","), header.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<SampleRecord>().enumerate() {
        let line = i as u64 + 2;
        let rec = row.map_err(|e| Error::Csv {
            line,
            reason: e.to_string(),
        })?;
        if rec.label > 1 {
            return Err(Error::Csv {
                line,
                reason: format!("label must be 0 or 1, got {}", rec.label),
            });
        }
        if rec.recipe > super::augment::RECIPE_COUNT {
            return Err(Error::Csv {
                line,
                reason: format!("recipe must be in 0..=13, got {}", rec.recipe),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(MANIFEST_HEADER)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Resolves a manifest path relative to the directory holding the manifest.
pub fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
