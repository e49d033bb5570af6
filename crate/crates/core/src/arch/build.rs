use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::schedule::{BlockKind, StemLayer, AUX_AFTER, SCHEDULE, STEM};
use crate::error::{Error, Result};
use crate::nn::{
    AuxTap, Checkpoint, Concat, ConvUnit, Dense, Dropout, GlobalAvgPool, LayerNode, Network, Pool, SeBlock,
    Sequential,
};
use crate::rng::{rng_for, str_hash};
use crate::scalar::Scalar;
use crate::tensor::{ConvSpec, PoolSpec, Tensor};

pub const BN_EPS: f64 = 1e-3;

/// Parameter initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal weights with std `sqrt(gain / fan_in)`, each tensor drawn from its own
    /// stream keyed by (seed, parameter name); biases zero.
    Seeded(u64),
    /// All weights zero. Useful when only shapes or counts matter.
    Zeros,
}

impl Init {
    fn seed(&self) -> u64 {
        match self {
            Init::Seeded(s) => *s,
            Init::Zeros => 0,
        }
    }

    fn weight<T: Scalar>(&self, name: &str, shape: Vec<usize>, fan_in: usize, gain: f64) -> Tensor<T> {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Seeded(seed) => {
                let mut rng = rng_for(&[*seed, str_hash(name)]);
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
                let n = shape.iter().product();
                let data = (0..n).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect();
                Tensor::new(shape, data).expect("non-empty shape")
            }
        }
    }
}

/// Conv (no bias) → batch-norm → ReLU. `kernel` and `pad` are (height, width).
pub fn make_conv_unit<T: Scalar>(
    path: &str,
    in_ch: usize,
    out_ch: usize,
    kernel: (usize, usize),
    stride: usize,
    pad: (usize, usize),
    init: Init,
) -> Result<LayerNode<T>> {
    let spec = ConvSpec {
        in_channels: in_ch,
        out_channels: out_ch,
        kernel_h: kernel.0,
        kernel_w: kernel.1,
        stride,
        pad_h: pad.0,
        pad_w: pad.1,
        bias: false,
    };
    spec.validate()?;
    let fan_in = in_ch * kernel.0 * kernel.1;
    let weight = init.weight(&format!("{path}.conv.weight"), spec.weight_shape().to_vec(), fan_in, 2.0);
    Ok(LayerNode::ConvUnit(ConvUnit::new(path, spec, weight, BN_EPS)?))
}

/// Squeeze-and-excitation block over `channels` with bottleneck `max(1, ⌊C/r⌋)`.
pub fn make_se_block<T: Scalar>(
    path: &str,
    channels: usize,
    reduction: usize,
    bias: bool,
    init: Init,
) -> Result<LayerNode<T>> {
    if channels == 0 || reduction == 0 {
        return Err(Error::InvalidArgument(format!(
            "SE block needs channels ≥ 1 and reduction ≥ 1, got C={channels}, r={reduction}"
        )));
    }
    let hidden = se_hidden(channels, reduction);
    let w1 = init.weight(&format!("{path}.fc1.weight"), vec![channels, hidden], channels, 2.0);
    let w2 = init.weight(&format!("{path}.fc2.weight"), vec![hidden, channels], hidden, 1.0);
    let b1 = bias.then(|| Tensor::zeros(vec![hidden]));
    let b2 = bias.then(|| Tensor::zeros(vec![channels]));
    Ok(LayerNode::SeBlock(SeBlock::new(path, w1, b1, w2, b2)?))
}

pub fn se_hidden(channels: usize, reduction: usize) -> usize {
    (channels / reduction).max(1)
}

/// Parameter count of one SE block.
pub fn se_param_count(channels: usize, reduction: usize, bias: bool) -> usize {
    let h = se_hidden(channels, reduction);
    2 * channels * h + if bias { h + channels } else { 0 }
}

struct BlockBuilder<'a> {
    name: &'a str,
    in_ch: usize,
    width: f64,
    init: Init,
}

/// (out channels, kernel (h, w), stride, padding (h, w)) of one conv unit in a chain.
type ChainStep = (usize, (usize, usize), usize, (usize, usize));

impl BlockBuilder<'_> {
    fn ch(&self, c: usize) -> usize {
        ((c as f64 * self.width).round() as usize).max(1)
    }

    fn conv<T: Scalar>(
        &self,
        path: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: (usize, usize),
    ) -> Result<LayerNode<T>> {
        make_conv_unit(path, in_ch, out_ch, kernel, stride, pad, self.init)
    }

    /// Chain of conv units named `{branch}.0`, `{branch}.1`, …, starting from the block input.
    fn chain<T: Scalar>(&self, branch: &str, layers: &[ChainStep]) -> Result<(LayerNode<T>, usize)> {
        let path = format!("{}.{branch}", self.name);
        let mut nodes = Vec::with_capacity(layers.len());
        let mut c = self.in_ch;
        for (i, &(out, k, s, p)) in layers.iter().enumerate() {
            nodes.push(self.conv(&format!("{path}.{i}"), c, out, k, s, p)?);
            c = out;
        }
        Ok((LayerNode::Sequential(Sequential::new(path, nodes)), c))
    }

    fn single<T: Scalar>(&self, branch: &str, out: usize) -> Result<(LayerNode<T>, usize)> {
        let path = format!("{}.{branch}", self.name);
        Ok((self.conv(&path, self.in_ch, out, (1, 1), 1, (0, 0))?, out))
    }

    fn avg_pool_branch<T: Scalar>(&self, out: usize) -> Result<(LayerNode<T>, usize)> {
        let path = format!("{}.branch_pool", self.name);
        let pool = LayerNode::Pool(Pool::new(format!("{path}.0"), PoolSpec::avg(3, 1, 1)));
        let conv = self.conv(&format!("{path}.1"), self.in_ch, out, (1, 1), 1, (0, 0))?;
        Ok((LayerNode::Sequential(Sequential::new(path, vec![pool, conv])), out))
    }

    fn max_pool_branch<T: Scalar>(&self) -> (LayerNode<T>, usize) {
        let path = format!("{}.branch_pool", self.name);
        (LayerNode::Pool(Pool::new(path, PoolSpec::max(3, 2))), self.in_ch)
    }

    /// `1×3` and `3×1` convolutions side by side over a `c`-channel input.
    fn split<T: Scalar>(&self, path: &str, c: usize, out: usize) -> Result<LayerNode<T>> {
        let a = self.conv(&format!("{path}.1x3"), c, out, (1, 3), 1, (0, 1))?;
        let b = self.conv(&format!("{path}.3x1"), c, out, (3, 1), 1, (1, 0))?;
        Ok(LayerNode::Concat(Concat::new(path, vec![a, b])))
    }

    fn build<T: Scalar>(&self, kind: BlockKind) -> Result<(LayerNode<T>, usize)> {
        let one = (1, 1);
        let p0 = (0, 0);
        let mut branches: Vec<(LayerNode<T>, usize)> = Vec::new();
        match kind {
            BlockKind::A { pool_width } => {
                let (c48, c64, c96) = (self.ch(48), self.ch(64), self.ch(96));
                branches.push(self.single("branch1x1", c64)?);
                branches.push(self.chain("branch5x5", &[(c48, one, 1, p0), (c64, (5, 5), 1, (2, 2))])?);
                branches.push(self.chain(
                    "branch3x3dbl",
                    &[(c64, one, 1, p0), (c96, (3, 3), 1, (1, 1)), (c96, (3, 3), 1, (1, 1))],
                )?);
                branches.push(self.avg_pool_branch(self.ch(pool_width))?);
            }
            BlockKind::ReductionA => {
                let (c64, c96, c384) = (self.ch(64), self.ch(96), self.ch(384));
                let path = format!("{}.branch3x3", self.name);
                branches.push((self.conv(&path, self.in_ch, c384, (3, 3), 2, p0)?, c384));
                branches.push(self.chain(
                    "branch3x3dbl",
                    &[(c64, one, 1, p0), (c96, (3, 3), 1, (1, 1)), (c96, (3, 3), 2, p0)],
                )?);
                branches.push(self.max_pool_branch());
            }
            BlockKind::C { width_7x7 } => {
                let (c7, c192) = (self.ch(width_7x7), self.ch(192));
                let (r17, r71) = ((1, 7), (7, 1));
                let (p17, p71) = ((0, 3), (3, 0));
                branches.push(self.single("branch1x1", c192)?);
                branches.push(self.chain(
                    "branch7x7",
                    &[(c7, one, 1, p0), (c7, r17, 1, p17), (c192, r71, 1, p71)],
                )?);
                branches.push(self.chain(
                    "branch7x7dbl",
                    &[
                        (c7, one, 1, p0),
                        (c7, r71, 1, p71),
                        (c7, r17, 1, p17),
                        (c7, r71, 1, p71),
                        (c192, r17, 1, p17),
                    ],
                )?);
                branches.push(self.avg_pool_branch(c192)?);
            }
            BlockKind::ReductionB => {
                let (c192, c320) = (self.ch(192), self.ch(320));
                branches.push(self.chain("branch3x3", &[(c192, one, 1, p0), (c320, (3, 3), 2, p0)])?);
                branches.push(self.chain(
                    "branch7x7x3",
                    &[
                        (c192, one, 1, p0),
                        (c192, (1, 7), 1, (0, 3)),
                        (c192, (7, 1), 1, (3, 0)),
                        (c192, (3, 3), 2, p0),
                    ],
                )?);
                branches.push(self.max_pool_branch());
            }
            BlockKind::E => {
                let (c192, c320, c384, c448) = (self.ch(192), self.ch(320), self.ch(384), self.ch(448));
                branches.push(self.single("branch1x1", c320)?);

                let path = format!("{}.branch3x3", self.name);
                let stem = self.conv(&format!("{path}.0"), self.in_ch, c384, one, 1, p0)?;
                let split = self.split(&format!("{path}.1"), c384, c384)?;
                branches.push((LayerNode::Sequential(Sequential::new(path, vec![stem, split])), 2 * c384));

                let path = format!("{}.branch3x3dbl", self.name);
                let a = self.conv(&format!("{path}.0"), self.in_ch, c448, one, 1, p0)?;
                let b = self.conv(&format!("{path}.1"), c448, c384, (3, 3), 1, (1, 1))?;
                let split = self.split(&format!("{path}.2"), c384, c384)?;
                branches.push((LayerNode::Sequential(Sequential::new(path, vec![a, b, split])), 2 * c384));

                branches.push(self.avg_pool_branch(c192)?);
            }
        }
        let out = branches.iter().map(|(_, c)| c).sum();
        let nodes = branches.into_iter().map(|(n, _)| n).collect();
        Ok((LayerNode::Concat(Concat::new(self.name, nodes)), out))
    }
}

/// One Inception block of the given kind; returns the node and its output channel count.
/// Every scheduled width is multiplied by `width` (rounded, at least 1).
pub fn make_inception_block<T: Scalar>(
    name: &str,
    kind: BlockKind,
    in_ch: usize,
    width: f64,
    init: Init,
) -> Result<(LayerNode<T>, usize)> {
    BlockBuilder { name, in_ch, width, init }.build(kind)
}

fn aux_head<T: Scalar>(cfg: &ModelConfig, in_ch: usize, init: Init) -> Result<LayerNode<T>> {
    let (c128, c768) = (cfg.scaled(128), cfg.scaled(768));
    let layers = vec![
        LayerNode::Pool(Pool::new("aux.pool", PoolSpec::avg(5, 3, 0))),
        make_conv_unit("aux.conv0", in_ch, c128, (1, 1), 1, (0, 0), init)?,
        make_conv_unit("aux.conv1", c128, c768, (5, 5), 1, (0, 0), init)?,
        LayerNode::GlobalAvgPool(GlobalAvgPool::new("aux.gap")),
        dense_head("aux.fc", c768, cfg.num_classes, init)?,
    ];
    Ok(LayerNode::AuxTap(AuxTap::new("aux", LayerNode::Sequential(Sequential::new("aux", layers)))))
}

fn dense_head<T: Scalar>(path: &str, inputs: usize, classes: usize, init: Init) -> Result<LayerNode<T>> {
    let w = init.weight(&format!("{path}.weight"), vec![inputs, classes], inputs, 1.0);
    Ok(LayerNode::Dense(Dense::new(path, w, Some(Tensor::zeros(vec![classes])))?))
}

/// Root layer tree: stem → blocks (each optionally followed by SE) → pool → dropout → dense.
pub fn build_layers<T: Scalar>(cfg: &ModelConfig, init: Init) -> Result<LayerNode<T>> {
    cfg.validate()?;
    let mut stages = Vec::new();
    let mut c = 3;
    for (i, layer) in STEM.iter().enumerate() {
        let path = format!("stem.{i}");
        match *layer {
            StemLayer::Conv { out, kernel, stride, pad } => {
                let out = cfg.scaled(out);
                stages.push(make_conv_unit(&path, c, out, (kernel, kernel), stride, (pad, pad), init)?);
                c = out;
            }
            StemLayer::MaxPool => stages.push(LayerNode::Pool(Pool::new(path, PoolSpec::max(3, 2)))),
        }
    }
    for block in SCHEDULE {
        let (node, out) = make_inception_block(block.name, block.kind, c, cfg.width_multiplier, init)?;
        c = out;
        if cfg.se_enabled_for(block.name) {
            let se = make_se_block(&format!("{}.se", block.name), c, cfg.se_reduction, cfg.se_bias, init)?;
            stages.push(LayerNode::Sequential(Sequential::new(block.name, vec![node, se])));
        } else {
            stages.push(node);
        }
        if cfg.use_aux && block.name == AUX_AFTER {
            stages.push(aux_head(cfg, c, init)?);
        }
    }
    stages.push(LayerNode::GlobalAvgPool(GlobalAvgPool::new("head.pool")));
    stages.push(LayerNode::Dropout(Dropout::new("head.dropout", cfg.dropout_rate, init.seed())?));
    stages.push(dense_head("head.fc", c, cfg.num_classes, init)?);
    Ok(LayerNode::Sequential(Sequential::new("", stages)))
}

pub fn build_model<T: Scalar>(cfg: &ModelConfig, init: Init) -> Result<Network<T>> {
    let root = build_layers(cfg, init)?;
    Network::new(root, vec![3, cfg.input_size, cfg.input_size])
}

/// Rebuilds the model described by a checkpoint's `model` metadata and loads its tensors.
pub fn model_from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<(ModelConfig, Network<T>)> {
    let meta = ck
        .metadata
        .get("model")
        .ok_or_else(|| Error::InvalidArgument("checkpoint metadata has no `model` entry".into()))?;
    let cfg: ModelConfig = serde_json::from_value(meta.clone())?;
    let mut net = build_model(&cfg, Init::Zeros)?;
    ck.apply_to(&mut net)?;
    Ok((cfg, net))
}
