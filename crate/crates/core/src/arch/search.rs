use serde::Serialize;

use super::build::{make_inception_block, se_param_count, Init};
use super::schedule::{BLOCK_NAMES, SCHEDULE, STEM, StemLayer};

/// Output channels of every Inception block at width 1.0, in network order.
pub fn block_channels() -> Vec<(&'static str, usize)> {
    let mut c = STEM
        .iter()
        .rev()
        .find_map(|l| match l {
            StemLayer::Conv { out, .. } => Some(*out),
            StemLayer::MaxPool => None,
        })
        .expect("stem has a convolution");
    SCHEDULE
        .iter()
        .map(|b| {
            let (_, out) = make_inception_block::<f32>(b.name, b.kind, c, 1.0, Init::Zeros).expect("canonical block");
            c = out;
            (b.name, out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeCandidate {
    pub reduction: usize,
    pub bias: bool,
    pub placement: Vec<&'static str>,
    pub params: usize,
    /// `params - target`.
    pub difference: i64,
}

/// The SE configuration (reduction in `1..=max_reduction`, bias on/off, any subset of
/// blocks) whose added parameter count is closest to `target`. Ties prefer more blocks,
/// then the smaller reduction.
pub fn nearest_se_config(target: usize, max_reduction: usize) -> SeCandidate {
    let blocks = block_channels();
    let mut best: Option<SeCandidate> = None;
    for reduction in 1..=max_reduction {
        for bias in [true, false] {
            let costs: Vec<usize> = blocks.iter().map(|&(_, c)| se_param_count(c, reduction, bias)).collect();
            for mask in 1u32..(1 << blocks.len()) {
                let params: usize = (0..blocks.len()).filter(|i| mask >> i & 1 == 1).map(|i| costs[i]).sum();
                let difference = params as i64 - target as i64;
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let key = (difference.abs(), std::cmp::Reverse(mask.count_ones() as usize));
                        key < (b.difference.abs(), std::cmp::Reverse(b.placement.len()))
                    }
                };
                if better {
                    best = Some(SeCandidate {
                        reduction,
                        bias,
                        placement: (0..blocks.len()).filter(|i| mask >> i & 1 == 1).map(|i| BLOCK_NAMES[i]).collect(),
                        params,
                        difference,
                    });
                }
            }
        }
    }
    best.expect("at least one candidate")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_block_widths() {
        let widths: Vec<usize> = block_channels().iter().map(|b| b.1).collect();
        assert_eq!(widths, [256, 288, 288, 768, 768, 768, 768, 768, 1280, 2048, 2048]);
    }

    #[test]
    fn all_blocks_at_reduction_16() {
        let total: usize = block_channels().iter().map(|&(_, c)| se_param_count(c, 16, true)).sum();
        // 2·C²/16 + C/16 + C summed over the eleven widths
        let oracle: usize = [256usize, 288, 288, 768, 768, 768, 768, 768, 1280, 2048, 2048]
            .iter()
            .map(|c| 2 * c * (c / 16) + c / 16 + c)
            .sum();
        assert_eq!(total, oracle);
        assert_ne!(total, 546_731);
    }

    #[test]
    fn search_finds_exact_subset_sums() {
        let target = se_param_count(768, 16, true) + se_param_count(2048, 16, true);
        let found = nearest_se_config(target, 16);
        assert_eq!(found.difference, 0);
    }
}
