//! The canonical InceptionV3 layer table.

/// Inception block names in network order.
pub const BLOCK_NAMES: [&str; 11] = [
    "mixed5b", "mixed5c", "mixed5d", "mixed6a", "mixed6b", "mixed6c", "mixed6d", "mixed6e", "mixed7a",
    "mixed7b", "mixed7c",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// 1×1, 5×5 (as 1×1→5×5), double 3×3 and pooled branches; parameter is the pool-branch width.
    A { pool_width: usize },
    /// Grid reduction 35→17.
    ReductionA,
    /// Factorized 7×7 branches; parameter is the inner 1×7/7×1 width.
    C { width_7x7: usize },
    /// Grid reduction 17→8.
    ReductionB,
    /// Expanded filter bank with split 1×3 / 3×1 outputs.
    E,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: &'static str,
    pub kind: BlockKind,
}

pub const SCHEDULE: [BlockSpec; 11] = [
    BlockSpec { name: "mixed5b", kind: BlockKind::A { pool_width: 32 } },
    BlockSpec { name: "mixed5c", kind: BlockKind::A { pool_width: 64 } },
    BlockSpec { name: "mixed5d", kind: BlockKind::A { pool_width: 64 } },
    BlockSpec { name: "mixed6a", kind: BlockKind::ReductionA },
    BlockSpec { name: "mixed6b", kind: BlockKind::C { width_7x7: 128 } },
    BlockSpec { name: "mixed6c", kind: BlockKind::C { width_7x7: 160 } },
    BlockSpec { name: "mixed6d", kind: BlockKind::C { width_7x7: 160 } },
    BlockSpec { name: "mixed6e", kind: BlockKind::C { width_7x7: 192 } },
    BlockSpec { name: "mixed7a", kind: BlockKind::ReductionB },
    BlockSpec { name: "mixed7b", kind: BlockKind::E },
    BlockSpec { name: "mixed7c", kind: BlockKind::E },
];

/// Stem layers: conv (out, kernel, stride, pad) or max pool (window 3, stride 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemLayer {
    Conv { out: usize, kernel: usize, stride: usize, pad: usize },
    MaxPool,
}

pub const STEM: [StemLayer; 7] = [
    StemLayer::Conv { out: 32, kernel: 3, stride: 2, pad: 0 },
    StemLayer::Conv { out: 32, kernel: 3, stride: 1, pad: 0 },
    StemLayer::Conv { out: 64, kernel: 3, stride: 1, pad: 1 },
    StemLayer::MaxPool,
    StemLayer::Conv { out: 80, kernel: 1, stride: 1, pad: 0 },
    StemLayer::Conv { out: 192, kernel: 3, stride: 1, pad: 0 },
    StemLayer::MaxPool,
];

/// The auxiliary classifier hangs off this block's output.
pub const AUX_AFTER: &str = "mixed6e";

/// Multiply-accumulates per output element of a k×k convolution, per input channel.
pub fn macs_per_output(kernel: usize) -> usize {
    kernel * kernel
}

/// Receptive field of a stack of stride-1 square convolutions.
pub fn stacked_receptive_field(kernels: &[usize]) -> usize {
    1 + kernels.iter().map(|k| k - 1).sum::<usize>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_follow_schedule() {
        let names: Vec<_> = SCHEDULE.iter().map(|b| b.name).collect();
        assert_eq!(names, BLOCK_NAMES);
    }

    #[test]
    fn factorization_constants() {
        assert_eq!(macs_per_output(5), 25);
        assert_eq!(macs_per_output(3), 9);
        let ratio = macs_per_output(5) as f64 / macs_per_output(3) as f64;
        assert_eq!(format!("{ratio:.2}"), "2.78");
        assert_eq!(stacked_receptive_field(&[3, 3]), 5);
        assert_eq!(stacked_receptive_field(&[5]), 5);
    }
}
