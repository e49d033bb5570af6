use std::fmt;

use serde::Serialize;

use crate::arch::{build_model, Init, ModelConfig};
use crate::error::Result;

/// Bytes per stored value in the size estimates.
const BYTES: f64 = 4.0;
const MIB: f64 = 1024.0 * 1024.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    /// Learnable parameters: trainable plus frozen.
    pub total_params: usize,
    pub trainable_params: usize,
    /// Learnable parameters excluded from training (none in the built models).
    pub non_trainable_params: usize,
    /// Batch-norm running statistics; stored in checkpoints, not counted above.
    pub running_stats: usize,
    pub input_mb: f64,
    pub forward_backward_mb: f64,
    pub params_mb: f64,
    pub total_mb: f64,
}

/// Size in MiB of `numel` 4-byte values.
pub fn size_mb(numel: usize) -> f64 {
    numel as f64 * BYTES / MIB
}

/// Rounds to 2 decimals, halves away from zero.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Sum of the three size columns as rendered.
pub fn estimated_total_mb(input_mb: f64, forward_backward_mb: f64, params_mb: f64) -> f64 {
    round2(round2(input_mb) + round2(forward_backward_mb) + round2(params_mb))
}

/// Parameter counts and memory estimates for a single sample of `cfg.input_size`.
/// Activations count every recorded layer output once, doubled for the backward pass.
pub fn summarize_model(cfg: &ModelConfig) -> Result<SummaryReport> {
    let net = build_model::<f32>(cfg, Init::Zeros)?;
    let counts = net.count_params();
    let records = net.trace_shapes(1)?;
    let activations: usize = records.iter().map(|r| r.recorded_numel()).sum();
    let input: usize = net.input_shape().iter().product();
    let input_mb = size_mb(input);
    let forward_backward_mb = 2.0 * size_mb(activations);
    let params_mb = size_mb(counts.trainable);
    Ok(SummaryReport {
        total_params: counts.trainable,
        trainable_params: counts.trainable,
        non_trainable_params: 0,
        running_stats: counts.non_trainable,
        input_mb,
        forward_backward_mb,
        params_mb,
        total_mb: estimated_total_mb(input_mb, forward_backward_mb, params_mb),
    })
}

fn grouped(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl fmt::Display for SummaryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Total Params: {}", grouped(self.total_params))?;
        writeln!(f, "Trainable Params: {}", grouped(self.trainable_params))?;
        writeln!(f, "Non-trainable Params: {}", grouped(self.non_trainable_params))?;
        writeln!(f, "Running statistics (not counted): {}", grouped(self.running_stats))?;
        writeln!(f, "Input Size (MB): {:.2}", self.input_mb)?;
        writeln!(f, "Forward/backward pass size (MB): {:.2}", self.forward_backward_mb)?;
        writeln!(f, "Params size (MB): {:.2}", self.params_mb)?;
        write!(f, "Estimated Total Size (MB): {:.2}", self.total_mb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_arithmetic() {
        assert_eq!(format!("{:.2}", size_mb(3 * 299 * 299)), "1.02");
        assert_eq!(format!("{:.2}", size_mb(24_381_299)), "93.01");
        assert_eq!(format!("{:.2}", size_mb(23_834_568)), "90.92");
        assert_eq!(format!("{:.2}", estimated_total_mb(1.02, 329.34, 93.01)), "423.37");
    }

    #[test]
    fn grouping() {
        assert_eq!(grouped(23_834_568), "23,834,568");
        assert_eq!(grouped(0), "0");
        assert_eq!(grouped(999), "999");
        assert_eq!(grouped(1000), "1,000");
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round2(0.125), 0.13);
        assert_eq!(round2(-0.125), -0.13);
    }
}
