use serde::{Deserialize, Serialize};

use super::schedule::BLOCK_NAMES;
use crate::error::{Error, Result};
use crate::tensor::window_extent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub use_se: bool,
    pub se_reduction: usize,
    /// Inception blocks followed by an SE block (when `use_se` is set).
    pub se_placement: Vec<String>,
    /// Whether the SE excitation layers carry biases.
    pub se_bias: bool,
    pub use_aux: bool,
    pub width_multiplier: f64,
    pub input_size: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 2,
            use_se: true,
            se_reduction: 16,
            se_placement: BLOCK_NAMES.iter().map(|s| s.to_string()).collect(),
            se_bias: true,
            use_aux: false,
            width_multiplier: 1.0,
            input_size: 299,
            dropout_rate: 0.5,
        }
    }
}

/// Smallest input side the stem and both grid reductions accept.
pub const MIN_INPUT_SIZE: usize = 75;

impl ModelConfig {
    /// Plain InceptionV3 with the reference 1000-class head.
    pub fn reference() -> Self {
        Self {
            num_classes: 1000,
            use_se: false,
            ..Self::default()
        }
    }

    /// Small model for tests and desk-scale runs: width 0.25, 96×96 input.
    pub fn mini() -> Self {
        Self {
            width_multiplier: 0.25,
            input_size: 96,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", format!("must be ≥ 2, got {}", self.num_classes)));
        }
        if self.se_reduction == 0 {
            return Err(Error::config("se_reduction", "must be ≥ 1"));
        }
        if let Some(bad) = self.se_placement.iter().find(|b| !BLOCK_NAMES.contains(&b.as_str())) {
            return Err(Error::config(
                "se_placement",
                format!("unknown block `{bad}`; expected one of {}", BLOCK_NAMES.join(", ")),
            ));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::config(
                "width_multiplier",
                format!("must be a positive finite number, got {}", self.width_multiplier),
            ));
        }
        if self.input_size < MIN_INPUT_SIZE {
            return Err(Error::config(
                "input_size",
                format!("must be ≥ {MIN_INPUT_SIZE}, got {}", self.input_size),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(
                "dropout_rate",
                format!("must lie in [0, 1), got {}", self.dropout_rate),
            ));
        }
        if self.use_aux {
            let side = grid_after_stem_and_reduction_a(self.input_size);
            // avg pool 5/3 then a 5×5 convolution
            let ok = window_extent(side, 5, 3, 0).is_some_and(|p| p >= 5);
            if !ok {
                return Err(Error::config(
                    "use_aux",
                    format!("the auxiliary head needs a 17×17 grid or larger; input {} gives {side}", self.input_size),
                ));
            }
        }
        Ok(())
    }

    pub fn se_enabled_for(&self, block: &str) -> bool {
        self.use_se && self.se_placement.iter().any(|b| b == block)
    }

    /// Scales a scheduled channel count, rounding to nearest with a floor of 1.
    pub fn scaled(&self, channels: usize) -> usize {
        ((channels as f64 * self.width_multiplier).round() as usize).max(1)
    }
}

/// Spatial side of the 17×17-grid stage for a square input of side `s`.
pub fn grid_after_stem_and_reduction_a(s: usize) -> usize {
    let step = |x: Option<usize>, k, st, p| x.and_then(|x| window_extent(x, k, st, p));
    let mut x = Some(s);
    x = step(x, 3, 2, 0);
    x = step(x, 3, 1, 0);
    x = step(x, 3, 2, 0);
    x = step(x, 3, 1, 0);
    x = step(x, 3, 2, 0);
    x = step(x, 3, 2, 0);
    x.unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_keys() {
        let c: ModelConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ModelConfig::default());
        assert_eq!(c.se_placement.len(), 11);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"num_clases": 3}"#).is_err());
    }

    #[test]
    fn violations_name_the_field() {
        let cases = [
            (ModelConfig { num_classes: 1, ..Default::default() }, "num_classes"),
            (ModelConfig { input_size: 74, ..Default::default() }, "input_size"),
            (ModelConfig { dropout_rate: 1.0, ..Default::default() }, "dropout_rate"),
            (ModelConfig { se_placement: vec!["mixed9".into()], ..Default::default() }, "se_placement"),
            (ModelConfig { use_aux: true, input_size: 96, ..Default::default() }, "use_aux"),
        ];
        for (cfg, field) in cases {
            match cfg.validate() {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
        ModelConfig { input_size: 75, ..Default::default() }.validate().unwrap();
        ModelConfig { use_aux: true, ..Default::default() }.validate().unwrap();
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(grid_after_stem_and_reduction_a(299), 17);
        assert_eq!(grid_after_stem_and_reduction_a(75), 3);
    }
}
