use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use seiv3::arch::ModelConfig;
use seiv3::train::TrainConfig;
use seiv3::{Error, Result};

/// The single JSON document that drives `train`, `sweep` and `summary`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Side length images are resized to. Must equal `model.input_size`; filled in
    /// from it when absent.
    pub target_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Also render the history as SVG charts under `curves/`.
    pub emit_svg: bool,
    /// Record real per-epoch timings in the history. Off by default because
    /// timings make repeated runs differ.
    pub wall_clock: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("run"),
            emit_svg: false,
            wall_clock: false,
        }
    }
}

const PATH_KEYS: [(&str, &str); 4] = [
    ("data", "train_manifest"),
    ("data", "val_manifest"),
    ("data", "test_manifest"),
    ("output", "directory"),
];

/// Parses `section.field=value`. The value is read as JSON when it parses, else as a string.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config {
            field: spec.into(),
            reason: "overrides take the form section.field=value".into(),
        })?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    Ok((key.trim().to_string(), value))
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let bad = |reason: &str| Error::Config {
        field: key.into(),
        reason: reason.into(),
    };
    let (section, field) = key.split_once('.').ok_or_else(|| bad("expected section.field"))?;
    let root = doc.as_object_mut().ok_or_else(|| bad("config document is not an object"))?;
    let entry = root
        .entry(section)
        .or_insert_with(|| Value::Object(Default::default()));
    let obj = entry.as_object_mut().ok_or_else(|| bad("section is not an object"))?;
    obj.insert(field.into(), value);
    Ok(())
}

impl RunConfig {
    /// Defaults, then the file (relative paths in it resolve against its directory),
    /// then `overrides` in order (relative paths resolve against the working
    /// directory). Paths come out absolute so the resolved document can be rerun
    /// from anywhere. Unknown keys anywhere are rejected.
    pub fn load(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut doc = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                let mut doc: Value = serde_json::from_str(&text)?;
                let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
                let base = std::path::absolute(parent.unwrap_or(Path::new(".")))?;
                rebase_paths(&mut doc, &base);
                doc
            }
            None => Value::Object(Default::default()),
        };
        for (key, value) in overrides {
            set_path(&mut doc, key, value.clone())?;
        }
        let mut cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config {
            field: "config".into(),
            reason: e.to_string(),
        })?;
        for p in [
            &mut cfg.data.train_manifest,
            &mut cfg.data.val_manifest,
            &mut cfg.data.test_manifest,
        ]
        .into_iter()
        .flatten()
        {
            *p = std::path::absolute(&*p)?;
        }
        cfg.output.directory = std::path::absolute(&cfg.output.directory)?;
        cfg.resolve()
    }

    /// Fills derived defaults and validates every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.model.validate()?;
        self.train.validate()?;
        match self.data.target_size {
            None => self.data.target_size = Some(self.model.input_size),
            Some(s) if s != self.model.input_size => {
                return Err(Error::Config {
                    field: "data.target_size".into(),
                    reason: format!("is {s} but model.input_size is {}", self.model.input_size),
                })
            }
            Some(_) => {}
        }
        Ok(self)
    }

    pub fn target_size(&self) -> usize {
        self.data.target_size.unwrap_or(self.model.input_size)
    }

    pub fn require(&self, field: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        value.clone().ok_or_else(|| Error::Config {
            field: field.into(),
            reason: "is required for this command".into(),
        })
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("config.resolved.json"), text)?;
        Ok(())
    }
}

fn rebase_paths(doc: &mut Value, base: &Path) {
    for (section, field) in PATH_KEYS {
        if let Some(Value::String(s)) = doc.get_mut(section).and_then(|v| v.get_mut(field)) {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = base.join(p).to_string_lossy().into_owned();
            }
        }
    }
}

/// Table-style name of a model variant: `SE-InceptionV3`, `InceptionV3+L2`, etc.
pub fn variant_label(model: &ModelConfig, train: &TrainConfig) -> String {
    let se = model.use_se && !model.se_placement.is_empty();
    let base = if se { "SE-InceptionV3" } else { "InceptionV3" };
    if train.lambda_l2 > 0.0 {
        format!("{base}+L2")
    } else {
        base.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering_and_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"model": {"use_se": false}, "train": {"epochs": 3}, "data": {"train_manifest": "m.csv"}}"#,
        )
        .unwrap();
        let over = [parse_override("train.epochs=5").unwrap()];
        let cfg = RunConfig::load(Some(&path), &over).unwrap();
        assert!(!cfg.model.use_se);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.data.train_manifest.unwrap(), std::path::absolute(dir.path().join("m.csv")).unwrap());
        assert!(cfg.output.directory.is_absolute());
        assert_eq!(cfg.data.target_size, Some(299));

        let typo = [parse_override("train.epoch=5").unwrap()];
        assert!(matches!(RunConfig::load(None, &typo), Err(Error::Config { .. })));
        let bad = [parse_override("model.input_size=96").unwrap(), parse_override("data.target_size=128").unwrap()];
        assert!(RunConfig::load(None, &bad).is_err());
    }

    #[test]
    fn resolved_round_trip() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn labels() {
        let mut m = ModelConfig::default();
        let mut t = TrainConfig::default();
        assert_eq!(variant_label(&m, &t), "SE-InceptionV3+L2");
        t.lambda_l2 = 0.0;
        assert_eq!(variant_label(&m, &t), "SE-InceptionV3");
        m.use_se = false;
        assert_eq!(variant_label(&m, &t), "InceptionV3");
    }
}
