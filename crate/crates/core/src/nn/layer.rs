use rand::Rng;

use super::param::Parameter;
use crate::error::{Error, Result};
use crate::rng::{rng_for, str_hash};
use crate::scalar::Scalar;
use crate::tensor::{
    activation, activation_backward, batchnorm, batchnorm_backward, conv2d, conv2d_backward,
    global_avg_pool, global_avg_pool_backward, matmul, matmul_backward, pool2d, pool2d_backward,
    Activation, BatchNormCache, BnMode, ConvSpec, PoolSpec, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardCtx {
    pub mode: Mode,
    /// Optimizer step index; keys the dropout mask so masks are reproducible.
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    ConvUnit,
    Pool,
    GlobalAvgPool,
    SeBlock,
    Concat,
    Sequential,
    Flatten,
    Dense,
    Dropout,
    AuxTap,
}

/// Output shape of one leaf node, as seen by shape tracing.
#[derive(Debug, Clone)]
pub struct ShapeRecord {
    pub path: String,
    pub kind: LayerKind,
    pub output_shape: Vec<usize>,
    /// Output-sized tensors the node produces per forward pass. A conv unit produces
    /// four: convolution output, normalized activations, affine output, rectified output.
    pub recorded: usize,
}

impl ShapeRecord {
    pub fn recorded_numel(&self) -> usize {
        self.recorded * self.output_shape.iter().product::<usize>()
    }
}

fn at<R>(path: &str, r: Result<R>) -> Result<R> {
    r.map_err(|e| match e {
        Error::Shape { op, detail } => Error::Shape {
            op: format!("{path} ({op})"),
            detail,
        },
        Error::NonFinite(op) => Error::NonFinite(format!("{path} ({op})")),
        other => other,
    })
}

fn missing_cache(path: &str) -> Error {
    Error::State(format!("backward at `{path}` without a preceding train-mode forward"))
}

fn add_row_bias<T: Scalar>(x: &mut Tensor<T>, bias: &Tensor<T>) {
    let k = bias.numel();
    let b = bias.data();
    for row in x.data_mut().chunks_exact_mut(k) {
        for (v, &bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
}

fn column_sums<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let k = *x.shape().last().expect("rank ≥ 1");
    let mut out = vec![T::zero(); k];
    for row in x.data().chunks_exact(k) {
        for (acc, &v) in out.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Tensor::new(vec![k], out).expect("non-empty")
}

// ---------------------------------------------------------------------------

struct ConvUnitCache<T> {
    input: Tensor<T>,
    bn: BatchNormCache<T>,
    output: Tensor<T>,
}

/// Convolution (no bias) → batch-norm → ReLU.
pub struct ConvUnit<T> {
    pub path: String,
    pub spec: ConvSpec,
    pub weight: Parameter<T>,
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Parameter<T>,
    pub running_var: Parameter<T>,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<ConvUnitCache<T>>,
}

impl<T: Scalar> ConvUnit<T> {
    pub fn new(path: impl Into<String>, spec: ConvSpec, weight: Tensor<T>, eps: f64) -> Result<Self> {
        spec.validate()?;
        if spec.bias {
            return Err(Error::InvalidArgument(
                "conv units carry no convolution bias; batch-norm supplies the shift".into(),
            ));
        }
        let path = path.into();
        if weight.shape() != spec.weight_shape() {
            return Err(Error::shape(
                path.clone(),
                format!("weight {:?}, expected {:?}", weight.shape(), spec.weight_shape()),
            ));
        }
        let c = spec.out_channels;
        Ok(Self {
            weight: Parameter::weight(format!("{path}.conv.weight"), weight),
            gamma: Parameter::affine(format!("{path}.bn.gamma"), Tensor::full(vec![c], T::one())),
            beta: Parameter::affine(format!("{path}.bn.beta"), Tensor::zeros(vec![c])),
            running_mean: Parameter::buffer(format!("{path}.bn.running_mean"), Tensor::zeros(vec![c])),
            running_var: Parameter::buffer(
                format!("{path}.bn.running_var"),
                Tensor::full(vec![c], T::one()),
            ),
            path,
            spec,
            eps,
            momentum: 0.1,
            cache: None,
        })
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let y = conv2d(x, &self.spec, &self.weight.value, None)?;
        let mode = match ctx.mode {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval,
        };
        let (z, bn) = batchnorm(
            &y,
            &self.gamma.value,
            &self.beta.value,
            &mut self.running_mean.value,
            &mut self.running_var.value,
            T::from_f64_lossy(self.eps),
            T::from_f64_lossy(self.momentum),
            mode,
        )?;
        let out = activation(&z, Activation::Relu)?;
        self.cache = match ctx.mode {
            Mode::Train => Some(ConvUnitCache {
                input: x.clone(),
                bn,
                output: out.clone(),
            }),
            Mode::Eval => None,
        };
        Ok(out)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache(&self.path))?;
        // relu(z) > 0 exactly when z > 0, so the output doubles as the mask.
        let dz = activation_backward(&cache.output, Activation::Relu, g)?;
        let bn = batchnorm_backward(&cache.bn, &self.gamma.value, &dz)?;
        let conv = conv2d_backward(&cache.input, &self.spec, &self.weight.value, &bn.input)?;
        self.gamma.accumulate(&bn.gamma)?;
        self.beta.accumulate(&bn.beta)?;
        self.weight.accumulate(&conv.weight)?;
        Ok(conv.input)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [n, c, h, w] = input[..] else {
            return Err(Error::shape("conv_unit", format!("rank-4 input expected, got {input:?}")));
        };
        if c != self.spec.in_channels {
            return Err(Error::shape(
                "conv_unit",
                format!("input has {c} channels, expected {}", self.spec.in_channels),
            ));
        }
        let (oh, ow) = self.spec.output_hw(h, w)?;
        Ok(vec![n, self.spec.out_channels, oh, ow])
    }
}

// ---------------------------------------------------------------------------

pub struct Pool<T> {
    pub path: String,
    pub spec: PoolSpec,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Pool<T> {
    pub fn new(path: impl Into<String>, spec: PoolSpec) -> Self {
        Self {
            path: path.into(),
            spec,
            cache: None,
        }
    }
}

pub struct GlobalAvgPool {
    pub path: String,
    cache: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new(path: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            cache: None,
        }
    }
}

pub struct Flatten {
    pub path: String,
    cache: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new(path: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            cache: None,
        }
    }
}

// ---------------------------------------------------------------------------

/// Fully connected layer `y = x·W + b`, with `W` stored as `in × out`.
pub struct Dense<T> {
    pub path: String,
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(path: impl Into<String>, weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let path = path.into();
        let (_, out) = weight.dims2("dense")?;
        if let Some(b) = &bias {
            if b.shape() != [out] {
                return Err(Error::shape(
                    path,
                    format!("bias {:?}, expected [{out}]", b.shape()),
                ));
            }
        }
        Ok(Self {
            weight: Parameter::weight(format!("{path}.weight"), weight),
            bias: bias.map(|b| Parameter::affine(format!("{path}.bias"), b)),
            path,
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let mut y = matmul(x, &self.weight.value)?;
        if let Some(b) = &self.bias {
            add_row_bias(&mut y, &b.value);
        }
        self.cache = (ctx.mode == Mode::Train).then(|| x.clone());
        y.ensure_finite("dense")
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache(&self.path))?;
        let (dx, dw) = matmul_backward(x, &self.weight.value, g)?;
        self.weight.accumulate(&dw)?;
        if let Some(b) = &mut self.bias {
            b.accumulate(&column_sums(g))?;
        }
        Ok(dx)
    }
}

// ---------------------------------------------------------------------------

/// Inverted dropout; the mask is a pure function of (seed, step, shape).
pub struct Dropout<T> {
    pub path: String,
    pub rate: f64,
    pub seed: u64,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(path: impl Into<String>, rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Self {
            path: path.into(),
            rate,
            seed,
            cache: None,
        })
    }

    fn mask(&self, shape: &[usize], step: u64) -> Tensor<T> {
        let mut rng = rng_for(&[self.seed, str_hash(&self.path), step]);
        let keep = T::from_f64_lossy(1.0 / (1.0 - self.rate));
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < self.rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        Tensor::new(shape.to_vec(), data).expect("mask matches input shape")
    }
}

// ---------------------------------------------------------------------------

struct SeCache<T> {
    input: Tensor<T>,
    pooled: Tensor<T>,
    hidden_pre: Tensor<T>,
    hidden: Tensor<T>,
    gates: Tensor<T>,
}

/// Squeeze-and-excitation: `out = x ⊙ sigmoid(W₂·relu(W₁·gap(x) + b₁) + b₂)`.
pub struct SeBlock<T> {
    pub path: String,
    pub channels: usize,
    pub hidden: usize,
    pub fc1_weight: Parameter<T>,
    pub fc1_bias: Option<Parameter<T>>,
    pub fc2_weight: Parameter<T>,
    pub fc2_bias: Option<Parameter<T>>,
    cache: Option<SeCache<T>>,
    last_gates: Option<Tensor<T>>,
}

impl<T: Scalar> SeBlock<T> {
    pub fn new(
        path: impl Into<String>,
        fc1_weight: Tensor<T>,
        fc1_bias: Option<Tensor<T>>,
        fc2_weight: Tensor<T>,
        fc2_bias: Option<Tensor<T>>,
    ) -> Result<Self> {
        let path = path.into();
        let (channels, hidden) = fc1_weight.dims2("se_block")?;
        if fc1_bias.as_ref().is_some_and(|b| b.shape() != [hidden])
            || fc2_weight.shape() != [hidden, channels]
            || fc2_bias.as_ref().is_some_and(|b| b.shape() != [channels])
        {
            return Err(Error::shape(
                path,
                format!(
                    "inconsistent excitation shapes: W1 {:?}, b1 {:?}, W2 {:?}, b2 {:?}",
                    fc1_weight.shape(),
                    fc1_bias.as_ref().map(|b| b.shape().to_vec()),
                    fc2_weight.shape(),
                    fc2_bias.as_ref().map(|b| b.shape().to_vec())
                ),
            ));
        }
        Ok(Self {
            fc1_weight: Parameter::weight(format!("{path}.fc1.weight"), fc1_weight),
            fc1_bias: fc1_bias.map(|b| Parameter::affine(format!("{path}.fc1.bias"), b)),
            fc2_weight: Parameter::weight(format!("{path}.fc2.weight"), fc2_weight),
            fc2_bias: fc2_bias.map(|b| Parameter::affine(format!("{path}.fc2.bias"), b)),
            path,
            channels,
            hidden,
            cache: None,
            last_gates: None,
        })
    }

    /// Gates from the most recent forward pass, `N×C`.
    pub fn last_gates(&self) -> Option<&Tensor<T>> {
        self.last_gates.as_ref()
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4("se_block")?;
        if c != self.channels {
            return Err(Error::shape(
                "se_block",
                format!("input has {c} channels, block expects {}", self.channels),
            ));
        }
        let pooled = global_avg_pool(x)?;
        let mut hidden_pre = matmul(&pooled, &self.fc1_weight.value)?;
        if let Some(b) = &self.fc1_bias {
            add_row_bias(&mut hidden_pre, &b.value);
        }
        let hidden = activation(&hidden_pre, Activation::Relu)?;
        let mut logits = matmul(&hidden, &self.fc2_weight.value)?;
        if let Some(b) = &self.fc2_bias {
            add_row_bias(&mut logits, &b.value);
        }
        let gates = activation(&logits, Activation::Sigmoid)?;

        let plane = h * w;
        let mut out = x.data().to_vec();
        for (chunk, &s) in out.chunks_exact_mut(plane).zip(gates.data()) {
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        let out = Tensor::new(vec![n, c, h, w], out)?.ensure_finite("se_block")?;
        self.last_gates = Some(gates.clone());
        self.cache = (ctx.mode == Mode::Train).then(|| SeCache {
            input: x.clone(),
            pooled,
            hidden_pre,
            hidden,
            gates,
        });
        Ok(out)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache(&self.path))?;
        g.check_same_shape(&cache.input, "se_block_backward")?;
        let (n, c, h, w) = g.dims4("se_block_backward")?;
        let plane = h * w;
        let x = cache.input.data();
        let gd = g.data();
        let gates = cache.gates.data();

        let mut dx = Vec::with_capacity(g.numel());
        let mut dgate = vec![T::zero(); n * c];
        for (i, &s) in gates.iter().enumerate() {
            let span = i * plane..(i + 1) * plane;
            let mut acc = T::zero();
            for (&gv, &xv) in gd[span.clone()].iter().zip(&x[span]) {
                dx.push(gv * s);
                acc += gv * xv;
            }
            dgate[i] = acc;
        }
        let dgate = Tensor::new(vec![n, c], dgate)?;
        let dlogits = activation_backward(&cache.gates, Activation::Sigmoid, &dgate)?;
        let (dhidden, dw2) = matmul_backward(&cache.hidden, &self.fc2_weight.value, &dlogits)?;
        let dhidden_pre = activation_backward(&cache.hidden_pre, Activation::Relu, &dhidden)?;
        let (dpooled, dw1) = matmul_backward(&cache.pooled, &self.fc1_weight.value, &dhidden_pre)?;
        let dsqueeze = global_avg_pool_backward(&[n, c, h, w], &dpooled)?;

        self.fc2_weight.accumulate(&dw2)?;
        if let Some(b) = &mut self.fc2_bias {
            b.accumulate(&column_sums(&dlogits))?;
        }
        self.fc1_weight.accumulate(&dw1)?;
        if let Some(b) = &mut self.fc1_bias {
            b.accumulate(&column_sums(&dhidden_pre))?;
        }

        let mut dx = Tensor::new(vec![n, c, h, w], dx)?;
        dx.add_assign(&dsqueeze)?;
        dx.ensure_finite("se_block_backward")
    }
}

// ---------------------------------------------------------------------------

/// Parallel branches over one input, concatenated on the channel axis.
pub struct Concat<T> {
    pub path: String,
    pub branches: Vec<LayerNode<T>>,
    cache: Option<Vec<usize>>,
}

impl<T: Scalar> Concat<T> {
    pub fn new(path: impl Into<String>, branches: Vec<LayerNode<T>>) -> Self {
        Self {
            path: path.into(),
            branches,
            cache: None,
        }
    }
}

pub struct Sequential<T> {
    pub path: String,
    pub layers: Vec<LayerNode<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(path: impl Into<String>, layers: Vec<LayerNode<T>>) -> Self {
        Self {
            path: path.into(),
            layers,
        }
    }
}

// ---------------------------------------------------------------------------

/// Side classifier attached mid-network. The main path passes through unchanged; in
/// train mode the branch output is kept so a caller can add its loss and feed the
/// matching gradient back before `backward`.
pub struct AuxTap<T> {
    pub path: String,
    pub branch: Vec<LayerNode<T>>,
    output: Option<Tensor<T>>,
    upstream: Option<Tensor<T>>,
}

impl<T: Scalar> AuxTap<T> {
    pub fn new(path: impl Into<String>, branch: LayerNode<T>) -> Self {
        Self {
            path: path.into(),
            branch: vec![branch],
            output: None,
            upstream: None,
        }
    }

    pub fn output(&self) -> Option<&Tensor<T>> {
        self.output.as_ref()
    }

    pub fn set_upstream(&mut self, g: Tensor<T>) {
        self.upstream = Some(g);
    }
}

// ---------------------------------------------------------------------------

/// A node of the layer graph. Composite nodes own their children, so the graph is a tree.
pub enum LayerNode<T> {
    ConvUnit(ConvUnit<T>),
    Pool(Pool<T>),
    GlobalAvgPool(GlobalAvgPool),
    SeBlock(SeBlock<T>),
    Concat(Concat<T>),
    Sequential(Sequential<T>),
    Flatten(Flatten),
    Dense(Dense<T>),
    Dropout(Dropout<T>),
    AuxTap(AuxTap<T>),
}

impl<T: Scalar> LayerNode<T> {
    pub fn path(&self) -> &str {
        match self {
            LayerNode::ConvUnit(l) => &l.path,
            LayerNode::Pool(l) => &l.path,
            LayerNode::GlobalAvgPool(l) => &l.path,
            LayerNode::SeBlock(l) => &l.path,
            LayerNode::Concat(l) => &l.path,
            LayerNode::Sequential(l) => &l.path,
            LayerNode::Flatten(l) => &l.path,
            LayerNode::Dense(l) => &l.path,
            LayerNode::Dropout(l) => &l.path,
            LayerNode::AuxTap(l) => &l.path,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerNode::ConvUnit(_) => LayerKind::ConvUnit,
            LayerNode::Pool(_) => LayerKind::Pool,
            LayerNode::GlobalAvgPool(_) => LayerKind::GlobalAvgPool,
            LayerNode::SeBlock(_) => LayerKind::SeBlock,
            LayerNode::Concat(_) => LayerKind::Concat,
            LayerNode::Sequential(_) => LayerKind::Sequential,
            LayerNode::Flatten(_) => LayerKind::Flatten,
            LayerNode::Dense(_) => LayerKind::Dense,
            LayerNode::Dropout(_) => LayerKind::Dropout,
            LayerNode::AuxTap(_) => LayerKind::AuxTap,
        }
    }

    pub fn children(&self) -> &[LayerNode<T>] {
        match self {
            LayerNode::Concat(c) => &c.branches,
            LayerNode::Sequential(s) => &s.layers,
            LayerNode::AuxTap(t) => &t.branch,
            _ => &[],
        }
    }

    pub fn children_mut(&mut self) -> &mut [LayerNode<T>] {
        match self {
            LayerNode::Concat(c) => &mut c.branches,
            LayerNode::Sequential(s) => &mut s.layers,
            LayerNode::AuxTap(t) => &mut t.branch,
            _ => &mut [],
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        match self {
            LayerNode::ConvUnit(l) => at(&l.path.clone(), l.forward(x, ctx)),
            LayerNode::Pool(l) => {
                let out = at(&l.path, pool2d(x, &l.spec))?;
                l.cache = (ctx.mode == Mode::Train).then(|| x.clone());
                Ok(out)
            }
            LayerNode::GlobalAvgPool(l) => {
                let out = at(&l.path, global_avg_pool(x))?;
                l.cache = (ctx.mode == Mode::Train).then(|| x.shape().to_vec());
                Ok(out)
            }
            LayerNode::SeBlock(l) => at(&l.path.clone(), l.forward(x, ctx)),
            LayerNode::Concat(l) => {
                let mut outs = Vec::with_capacity(l.branches.len());
                for b in &mut l.branches {
                    outs.push(b.forward(x, ctx)?);
                }
                let widths = outs.iter().map(|o| o.shape().get(1).copied().unwrap_or(0)).collect();
                let out = at(&l.path, Tensor::concat_channels(&outs))?;
                l.cache = (ctx.mode == Mode::Train).then_some(widths);
                Ok(out)
            }
            LayerNode::Sequential(s) => {
                let mut cur = x.clone();
                for layer in &mut s.layers {
                    cur = layer.forward(&cur, ctx)?;
                }
                Ok(cur)
            }
            LayerNode::Flatten(l) => {
                let n = x.shape()[0];
                let out = at(&l.path, x.reshape(vec![n, x.numel() / n]))?;
                l.cache = (ctx.mode == Mode::Train).then(|| x.shape().to_vec());
                Ok(out)
            }
            LayerNode::Dense(l) => at(&l.path.clone(), l.forward(x, ctx)),
            LayerNode::Dropout(l) => {
                if ctx.mode == Mode::Eval || l.rate == 0.0 {
                    l.cache = (ctx.mode == Mode::Train)
                        .then(|| Tensor::full(x.shape().to_vec(), T::one()));
                    return Ok(x.clone());
                }
                let mask = l.mask(x.shape(), ctx.step);
                let data = x.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect();
                l.cache = Some(mask);
                Tensor::new(x.shape().to_vec(), data)
            }
            LayerNode::AuxTap(t) => {
                t.upstream = None;
                t.output = match ctx.mode {
                    Mode::Train => Some(t.branch[0].forward(x, ctx)?),
                    Mode::Eval => None,
                };
                Ok(x.clone())
            }
        }
    }

    /// Propagates `g` (gradient w.r.t. this node's output) and accumulates parameter
    /// gradients. Returns the gradient w.r.t. the node's input.
    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            LayerNode::ConvUnit(l) => at(&l.path.clone(), l.backward(g)),
            LayerNode::Pool(l) => {
                let x = l.cache.as_ref().ok_or_else(|| missing_cache(&l.path))?;
                at(&l.path, pool2d_backward(x, &l.spec, g))
            }
            LayerNode::GlobalAvgPool(l) => {
                let shape = l.cache.as_ref().ok_or_else(|| missing_cache(&l.path))?;
                at(&l.path, global_avg_pool_backward(shape, g))
            }
            LayerNode::SeBlock(l) => at(&l.path.clone(), l.backward(g)),
            LayerNode::Concat(l) => {
                let widths = l.cache.clone().ok_or_else(|| missing_cache(&l.path))?;
                let mut dx: Option<Tensor<T>> = None;
                let mut start = 0;
                for (branch, width) in l.branches.iter_mut().zip(widths) {
                    let part = at(&l.path, g.channel_slice(start, width))?;
                    start += width;
                    let d = branch.backward(&part)?;
                    match &mut dx {
                        Some(acc) => acc.add_assign(&d)?,
                        None => dx = Some(d),
                    }
                }
                dx.ok_or_else(|| Error::State(format!("`{}` has no branches", l.path)))
            }
            LayerNode::Sequential(s) => {
                let mut cur = g.clone();
                for layer in s.layers.iter_mut().rev() {
                    cur = layer.backward(&cur)?;
                }
                Ok(cur)
            }
            LayerNode::Flatten(l) => {
                let shape = l.cache.as_ref().ok_or_else(|| missing_cache(&l.path))?;
                at(&l.path, g.reshape(shape.clone()))
            }
            LayerNode::Dense(l) => at(&l.path.clone(), l.backward(g)),
            LayerNode::Dropout(l) => {
                let mask = l.cache.as_ref().ok_or_else(|| missing_cache(&l.path))?;
                g.check_same_shape(mask, "dropout_backward")?;
                let data = g.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect();
                Tensor::new(g.shape().to_vec(), data)
            }
            LayerNode::AuxTap(t) => {
                if t.output.is_none() {
                    return Err(missing_cache(&t.path));
                }
                match t.upstream.clone() {
                    Some(u) => {
                        let mut dx = t.branch[0].backward(&u)?;
                        dx.add_assign(g)?;
                        Ok(dx)
                    }
                    None => Ok(g.clone()),
                }
            }
        }
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        match self {
            LayerNode::ConvUnit(l) => {
                for p in [&l.weight, &l.gamma, &l.beta, &l.running_mean, &l.running_var] {
                    f(p);
                }
            }
            LayerNode::SeBlock(l) => {
                f(&l.fc1_weight);
                if let Some(b) = &l.fc1_bias {
                    f(b);
                }
                f(&l.fc2_weight);
                if let Some(b) = &l.fc2_bias {
                    f(b);
                }
            }
            LayerNode::Dense(l) => {
                f(&l.weight);
                if let Some(b) = &l.bias {
                    f(b);
                }
            }
            LayerNode::Concat(_) | LayerNode::Sequential(_) | LayerNode::AuxTap(_) => {
                for child in self.children() {
                    child.visit_params(f);
                }
            }
            _ => {}
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        match self {
            LayerNode::ConvUnit(l) => {
                for p in [
                    &mut l.weight,
                    &mut l.gamma,
                    &mut l.beta,
                    &mut l.running_mean,
                    &mut l.running_var,
                ] {
                    f(p);
                }
            }
            LayerNode::SeBlock(l) => {
                f(&mut l.fc1_weight);
                if let Some(b) = &mut l.fc1_bias {
                    f(b);
                }
                f(&mut l.fc2_weight);
                if let Some(b) = &mut l.fc2_bias {
                    f(b);
                }
            }
            LayerNode::Dense(l) => {
                f(&mut l.weight);
                if let Some(b) = &mut l.bias {
                    f(b);
                }
            }
            LayerNode::Concat(_) | LayerNode::Sequential(_) | LayerNode::AuxTap(_) => {
                for child in self.children_mut() {
                    child.visit_params_mut(f);
                }
            }
            _ => {}
        }
    }

    /// Drops every saved forward intermediate.
    pub fn clear_cache(&mut self) {
        match self {
            LayerNode::ConvUnit(l) => l.cache = None,
            LayerNode::Pool(l) => l.cache = None,
            LayerNode::GlobalAvgPool(l) => l.cache = None,
            LayerNode::SeBlock(l) => l.cache = None,
            LayerNode::Concat(l) => {
                l.cache = None;
                l.branches.iter_mut().for_each(LayerNode::clear_cache);
            }
            LayerNode::Sequential(s) => s.layers.iter_mut().for_each(LayerNode::clear_cache),
            LayerNode::Flatten(l) => l.cache = None,
            LayerNode::Dense(l) => l.cache = None,
            LayerNode::Dropout(l) => l.cache = None,
            LayerNode::AuxTap(t) => {
                t.output = None;
                t.upstream = None;
                t.branch.iter_mut().for_each(LayerNode::clear_cache);
            }
        }
    }

    /// Infers the output shape without computing anything, appending one record per
    /// leaf node (and per concatenation) to `records`.
    pub fn trace_shapes(&self, input: &[usize], records: &mut Vec<ShapeRecord>) -> Result<Vec<usize>> {
        let out = match self {
            LayerNode::ConvUnit(l) => at(&l.path, l.output_shape(input))?,
            LayerNode::Pool(l) => {
                let [n, c, h, w] = input[..] else {
                    return at(&l.path, Err(Error::shape("pool2d", format!("rank-4 input expected, got {input:?}"))));
                };
                let (oh, ow) = at(&l.path, l.spec.output_hw(h, w))?;
                vec![n, c, oh, ow]
            }
            LayerNode::GlobalAvgPool(l) => match input[..] {
                [n, c, _, _] => vec![n, c],
                _ => return at(&l.path, Err(Error::shape("global_avg_pool", format!("rank-4 input expected, got {input:?}")))),
            },
            LayerNode::SeBlock(l) => {
                match input[..] {
                    [_, c, _, _] if c == l.channels => {}
                    _ => {
                        return at(
                            &l.path,
                            Err(Error::shape(
                                "se_block",
                                format!("input {input:?} does not have {} channels", l.channels),
                            )),
                        )
                    }
                }
                input.to_vec()
            }
            LayerNode::Concat(l) => {
                let mut total = 0;
                let mut first: Option<Vec<usize>> = None;
                for b in &l.branches {
                    let s = b.trace_shapes(input, records)?;
                    if s.len() != 4 {
                        return at(&l.path, Err(Error::shape("concat", format!("branch output {s:?} is not rank 4"))));
                    }
                    if let Some(f) = &first {
                        if (f[0], f[2], f[3]) != (s[0], s[2], s[3]) {
                            return at(
                                &l.path,
                                Err(Error::shape(
                                    "concat",
                                    format!("branch `{}` output {s:?} disagrees with {f:?}", b.path()),
                                )),
                            );
                        }
                    }
                    total += s[1];
                    first.get_or_insert(s);
                }
                let mut s = first.ok_or_else(|| Error::shape(l.path.clone(), "concat without branches"))?;
                s[1] = total;
                s
            }
            LayerNode::Sequential(s) => {
                let mut cur = input.to_vec();
                for layer in &s.layers {
                    cur = layer.trace_shapes(&cur, records)?;
                }
                return Ok(cur);
            }
            LayerNode::Flatten(_) => vec![input[0], input[1..].iter().product()],
            LayerNode::Dense(l) => match input[..] {
                [n, k] if k == l.in_features() => vec![n, l.out_features()],
                _ => {
                    return at(
                        &l.path,
                        Err(Error::shape(
                            "dense",
                            format!("input {input:?}, expected [N, {}]", l.in_features()),
                        )),
                    )
                }
            },
            LayerNode::Dropout(_) => input.to_vec(),
            LayerNode::AuxTap(t) => {
                t.branch[0].trace_shapes(input, records)?;
                return Ok(input.to_vec());
            }
        };
        let recorded = match self.kind() {
            LayerKind::ConvUnit => 4,
            _ => 1,
        };
        records.push(ShapeRecord {
            path: self.path().to_string(),
            kind: self.kind(),
            output_shape: out.clone(),
            recorded,
        });
        Ok(out)
    }
}
