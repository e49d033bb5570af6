//! Central-difference checks of every layer kind's analytic gradients in f64.
//!
//! Each layer gets random shapes (every extent ≤ 5). Inputs are checked by
//! differentiating `Σ r ⊙ layer(x)` for a random `r`; parameters are checked through
//! `grad_check` on a small network ending in a random dense projection.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seiv3::nn::{
    grad_check, CheckLoss, Concat, ConvUnit, Dense, Flatten, ForwardCtx, GlobalAvgPool, GradCheckOptions, LayerNode,
    Mode, Network, Pool, SeBlock, Sequential,
};
use seiv3::tensor::{batchnorm, batchnorm_backward, BnMode, ConvSpec, PoolSpec};
use seiv3::train::{cross_entropy, l2_penalty, l2_value};
use seiv3::Tensor;

pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

const CTX: ForwardCtx = ForwardCtx {
    mode: Mode::Train,
    step: 0,
};

fn weighted_sum(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Max relative error of `d/dx Σ r ⊙ layer(x)` over every input coordinate.
pub fn input_check(layer: &mut LayerNode<f64>, x: &Tensor<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let out = layer.forward(x, &CTX).unwrap();
    let r = random_tensor(rng, out.shape().to_vec());
    let analytic = layer.backward(&r).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut xp = x.clone();
        xp.data_mut()[i] += STEP;
        let plus = weighted_sum(&layer.forward(&xp, &CTX).unwrap(), &r);
        let mut xm = x.clone();
        xm.data_mut()[i] -= STEP;
        let minus = weighted_sum(&layer.forward(&xm, &CTX).unwrap(), &r);
        worst = worst.max(rel_err(analytic.data()[i], (plus - minus) / (2.0 * STEP)));
    }
    worst
}

/// Parameter check of `layer` followed by flatten and a random dense projection.
fn param_check(layer: LayerNode<f64>, input_shape: Vec<usize>, batch: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut traced = vec![1];
    traced.extend(&input_shape);
    let features: usize = layer.trace_shapes(&traced, &mut Vec::new()).unwrap()[1..].iter().product();
    let head = Dense::new("probe", random_tensor(rng, vec![features, 3]), Some(random_tensor(rng, vec![3]))).unwrap();
    let root = Sequential::new(
        "check",
        vec![layer, LayerNode::Flatten(Flatten::new("flat")), LayerNode::Dense(head)],
    );
    let mut net = Network::new(LayerNode::Sequential(root), input_shape.clone()).unwrap();
    let mut shape = vec![batch];
    shape.extend(input_shape);
    let x = random_tensor(rng, shape);
    let report = grad_check(&mut net, &x, &GradCheckOptions::default()).unwrap();
    report.max_rel_error()
}

fn conv_unit(path: &str, rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ConvUnit<f64> {
    loop {
        let co = rng.gen_range(1..=5);
        let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let stride = rng.gen_range(1..=2);
        let (ph, pw) = (rng.gen_range(0..=1), rng.gen_range(0..=1));
        if h + 2 * ph < kh || w + 2 * pw < kw {
            continue;
        }
        let spec = ConvSpec {
            in_channels: c,
            out_channels: co,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad_h: ph,
            pad_w: pw,
            bias: false,
        };
        let weight = random_tensor(rng, spec.weight_shape().to_vec());
        let mut unit = ConvUnit::new(path, spec, weight, 1e-3).unwrap();
        // non-trivial affine so both BN parameters matter
        unit.gamma.value = random_tensor(rng, vec![co]).map(|v| 1.0 + 0.5 * v);
        unit.beta.value = random_tensor(rng, vec![co]).map(|v| 0.3 * v);
        return unit;
    }
}

fn same_grid_unit(path: &str, rng: &mut ChaCha8Rng, c: usize, k: usize) -> ConvUnit<f64> {
    let spec = ConvSpec::square(c, rng.gen_range(1..=4), k, 1, k / 2);
    let weight = random_tensor(rng, spec.weight_shape().to_vec());
    ConvUnit::new(path, spec, weight, 1e-3).unwrap()
}

fn se_block(rng: &mut ChaCha8Rng, c: usize, bias: bool) -> SeBlock<f64> {
    let hidden = rng.gen_range(1..=c.max(1));
    SeBlock::new(
        "se",
        random_tensor(rng, vec![c, hidden]),
        bias.then(|| random_tensor(rng, vec![hidden])),
        random_tensor(rng, vec![hidden, c]),
        bias.then(|| random_tensor(rng, vec![c])),
    )
    .unwrap()
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    (
        rng.gen_range(2..=3),
        rng.gen_range(1..=5),
        rng.gen_range(2..=5),
        rng.gen_range(2..=5),
    )
}

fn batchnorm_check(rng: &mut ChaCha8Rng) -> f64 {
    let (n, c, h, w) = dims(rng);
    let x = random_tensor(rng, vec![n, c, h, w]);
    let gamma = random_tensor(rng, vec![c]).map(|v| 1.0 + 0.5 * v);
    let beta = random_tensor(rng, vec![c]);
    let r = random_tensor(rng, vec![n, c, h, w]);
    let eval = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
        let (mut rm, mut rv) = (Tensor::zeros(vec![c]), Tensor::full(vec![c], 1.0));
        let (y, _) = batchnorm(x, g, b, &mut rm, &mut rv, 1e-3, 0.1, BnMode::Train).unwrap();
        weighted_sum(&y, &r)
    };
    let (mut rm, mut rv) = (Tensor::zeros(vec![c]), Tensor::full(vec![c], 1.0));
    let (_, cache) = batchnorm(&x, &gamma, &beta, &mut rm, &mut rv, 1e-3, 0.1, BnMode::Train).unwrap();
    let grads = batchnorm_backward(&cache, &gamma, &r).unwrap();

    let mut worst: f64 = 0.0;
    let mut probe = |which: usize, analytic: &Tensor<f64>| {
        for i in 0..analytic.numel() {
            let mut vals = [x.clone(), gamma.clone(), beta.clone()];
            vals[which].data_mut()[i] += STEP;
            let plus = eval(&vals[0], &vals[1], &vals[2]);
            vals[which].data_mut()[i] -= 2.0 * STEP;
            let minus = eval(&vals[0], &vals[1], &vals[2]);
            worst = worst.max(rel_err(analytic.data()[i], (plus - minus) / (2.0 * STEP)));
        }
    };
    probe(0, &grads.input);
    probe(1, &grads.gamma);
    probe(2, &grads.beta);
    worst
}

fn cross_entropy_check(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..=5);
    let k = rng.gen_range(2..=5);
    let logits = random_tensor(rng, vec![n, k]).map(|v| 3.0 * v);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let (_, grad) = cross_entropy(&logits, &labels).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..logits.numel() {
        let mut p = logits.clone();
        p.data_mut()[i] += STEP;
        let mut m = logits.clone();
        m.data_mut()[i] -= STEP;
        let numeric = (cross_entropy(&p, &labels).unwrap().0 - cross_entropy(&m, &labels).unwrap().0) / (2.0 * STEP);
        worst = worst.max(rel_err(grad.data()[i], numeric));
    }
    worst
}

fn l2_check(rng: &mut ChaCha8Rng) -> f64 {
    let (_, c, h, w) = dims(rng);
    let unit = conv_unit("l2", rng, c, h, w);
    let mut net = Network::new(LayerNode::ConvUnit(unit), vec![c, h, w]).unwrap();
    let lambda = rng.gen_range(0.01..0.5);
    net.zero_grad();
    l2_penalty(&mut net, lambda).unwrap();
    let names: Vec<(String, Tensor<f64>, Tensor<f64>)> = net
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.clone(), p.grad.clone()))
        .collect();
    let mut worst: f64 = 0.0;
    for (name, value, grad) in names {
        for i in 0..value.numel() {
            let mut shifted = |delta: f64| {
                net.visit_params_mut(&mut |p| {
                    if p.name == name {
                        p.value.data_mut()[i] = value.data()[i] + delta;
                    }
                });
                l2_value(&net, lambda)
            };
            let numeric = (shifted(STEP) - shifted(-STEP)) / (2.0 * STEP);
            shifted(0.0);
            worst = worst.max(rel_err(grad.data()[i], numeric));
        }
    }
    worst
}

/// Runs `trials` random instances of every layer kind and returns the worst relative
/// error seen per kind.
pub fn layer_suite(trials: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results: Vec<(&'static str, f64)> = Vec::new();
    let mut record = |kind: &'static str, err: f64| match results.iter_mut().find(|(k, _)| *k == kind) {
        Some(slot) => slot.1 = slot.1.max(err),
        None => results.push((kind, err)),
    };

    for _ in 0..trials {
        let (n, c, h, w) = dims(&mut rng);
        let x = random_tensor(&mut rng, vec![n, c, h, w]);

        let unit = conv_unit("cu", &mut rng, c, h, w);
        let mut node = LayerNode::ConvUnit(unit);
        let e_in = input_check(&mut node, &x, &mut rng);
        let e_par = param_check(node, vec![c, h, w], n, &mut rng);
        record("conv-unit", e_in.max(e_par));

        let k = rng.gen_range(1..=h.min(w).min(3));
        let stride = rng.gen_range(1..=2);
        let mut max_pool = LayerNode::Pool(Pool::new("mp", PoolSpec::max(k, stride)));
        record("max-pool", input_check(&mut max_pool, &x, &mut rng));
        let pad = rng.gen_range(0..=k / 2);
        let mut avg_pool = LayerNode::Pool(Pool::new("ap", PoolSpec::avg(k, stride, pad)));
        record("avg-pool", input_check(&mut avg_pool, &x, &mut rng));

        let mut gap = LayerNode::GlobalAvgPool(GlobalAvgPool::new("gap"));
        record("global-avg-pool", input_check(&mut gap, &x, &mut rng));

        record("batch-norm", batchnorm_check(&mut rng));

        for bias in [true, false] {
            let mut se = LayerNode::SeBlock(se_block(&mut rng, c, bias));
            let e_in = input_check(&mut se, &x, &mut rng);
            let e_par = param_check(se, vec![c, h, w], n, &mut rng);
            record("se-block", e_in.max(e_par));
        }

        let (fin, fout) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let dense = Dense::new("fc", random_tensor(&mut rng, vec![fin, fout]), Some(random_tensor(&mut rng, vec![fout])))
            .unwrap();
        let mut node = LayerNode::Dense(dense);
        let xd = random_tensor(&mut rng, vec![n, fin]);
        let e_in = input_check(&mut node, &xd, &mut rng);
        let e_par = param_check(node, vec![fin], n, &mut rng);
        record("dense", e_in.max(e_par));

        // 1×1 and padded 3×3 stride-1 branches keep the input grid, so they concatenate
        let branches = vec![
            LayerNode::ConvUnit(same_grid_unit("b0", &mut rng, c, 1)),
            LayerNode::ConvUnit(same_grid_unit("b1", &mut rng, c, 3)),
        ];
        let mut cat = LayerNode::Concat(Concat::new("cat", branches));
        let e_in = input_check(&mut cat, &x, &mut rng);
        let e_par = param_check(cat, vec![c, h, w], n, &mut rng);
        record("concat", e_in.max(e_par));

        record("softmax-ce", cross_entropy_check(&mut rng));
        record("l2", l2_check(&mut rng));
    }
    results
}

/// Parameter check of the whole mini model (width 0.25, 96×96 input) under
/// cross-entropy plus the L2 penalty, on `coords` sampled coordinates per parameter.
pub fn end_to_end_mini(seed: u64, batch: usize, coords: usize, analytic_scale: f64) -> seiv3::nn::GradCheckReport {
    end_to_end(&seiv3::arch::ModelConfig::mini(), seed, batch, coords, analytic_scale)
}

/// Step for whole-model checks. Ninety-odd ReLU and max-pool layers put kinks within
/// 1e-5 of many coordinates, so the layer-level step is too coarse here.
pub const MODEL_STEP: f64 = 1e-7;
/// At that step the loss (which includes the L2 term) carries round-off near 1e-8 in
/// the difference quotient, so gradients below this are compared absolutely.
pub const MODEL_FLOOR: f64 = 1e-4;

pub fn end_to_end(
    cfg: &seiv3::arch::ModelConfig,
    seed: u64,
    batch: usize,
    coords: usize,
    analytic_scale: f64,
) -> seiv3::nn::GradCheckReport {
    use seiv3::arch::{build_model, Init};
    let mut net = build_model::<f64>(cfg, Init::Seeded(seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, vec![batch, 3, cfg.input_size, cfg.input_size]);
    let opts = GradCheckOptions {
        coords_per_param: coords,
        step: MODEL_STEP,
        abs_floor: MODEL_FLOOR,
        seed,
        loss: CheckLoss::CrossEntropy {
            labels: (0..batch).map(|i| i % 2).collect(),
            lambda_l2: 0.01,
        },
        analytic_scale,
        ..GradCheckOptions::default()
    };
    grad_check(&mut net, &x, &opts).unwrap()
}
