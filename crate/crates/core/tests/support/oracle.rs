//! Naive sliding-window convolution and pooling, written directly from the
//! definitions, plus a random case generator comparing them to the library kernels.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seiv3::tensor::{conv2d, pool2d, ConvSpec, PoolKind, PoolSpec};
use seiv3::Tensor;

pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

fn out_extent(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    (padded >= k).then(|| (padded - k) / stride + 1)
}

/// `out[n][o][y][x] = b[o] + Σ_c Σ_i Σ_j w[o][c][i][j] · x[n][c][y·s+i−ph][x·s+j−pw]`,
/// out-of-frame reads contributing zero.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &[f64],
    d: &Dims,
    weight: &[f64],
    co: usize,
    (kh, kw): (usize, usize),
    stride: usize,
    (ph, pw): (usize, usize),
    bias: Option<&[f64]>,
) -> (Vec<f64>, usize, usize) {
    let oh = out_extent(d.h, kh, stride, ph).unwrap();
    let ow = out_extent(d.w, kw, stride, pw).unwrap();
    let mut out = vec![0.0; d.n * co * oh * ow];
    for n in 0..d.n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for c in 0..d.c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (oy * stride + i) as isize - ph as isize;
                                let ix = (ox * stride + j) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                                    continue;
                                }
                                let xv = x[((n * d.c + c) * d.h + iy as usize) * d.w + ix as usize];
                                let wv = weight[((o * d.c + c) * kh + i) * kw + j];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((n * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Max over the in-frame cells of each window, or the window sum divided by the full
/// window area (padding counted as zeros).
pub fn naive_pool(x: &[f64], d: &Dims, max: bool, k: usize, stride: usize, pad: usize) -> Vec<f64> {
    let oh = out_extent(d.h, k, stride, pad).unwrap();
    let ow = out_extent(d.w, k, stride, pad).unwrap();
    let mut out = Vec::with_capacity(d.n * d.c * oh * ow);
    for plane in 0..d.n * d.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut sum = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        let iy = (oy * stride + i) as isize - pad as isize;
                        let ix = (ox * stride + j) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                            continue;
                        }
                        let v = x[(plane * d.h + iy as usize) * d.w + ix as usize];
                        best = best.max(v);
                        sum += v;
                    }
                }
                out.push(if max { best } else { sum / (k * k) as f64 });
            }
        }
    }
    out
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Default)]
pub struct KernelReport {
    pub conv_cases: usize,
    pub pool_cases: usize,
    pub conv_max_err: f64,
    pub pool_max_err: f64,
}

/// Runs `cases` random convolutions and `cases` random poolings (extents ≤ 8) through
/// both the library and the naive definitions.
pub fn kernel_oracle(cases: usize, seed: u64) -> KernelReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = KernelReport::default();

    while report.conv_cases < cases {
        let d = Dims {
            n: rng.gen_range(1..=2),
            c: rng.gen_range(1..=4),
            h: rng.gen_range(1..=8),
            w: rng.gen_range(1..=8),
        };
        let co = rng.gen_range(1..=4);
        let (kh, kw) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let stride = rng.gen_range(1..=3);
        let (ph, pw) = (rng.gen_range(0..=2), rng.gen_range(0..=2));
        if out_extent(d.h, kh, stride, ph).is_none() || out_extent(d.w, kw, stride, pw).is_none() {
            continue;
        }
        let with_bias = rng.gen_bool(0.5);
        let x = random_vec(&mut rng, d.n * d.c * d.h * d.w);
        let weight = random_vec(&mut rng, co * d.c * kh * kw);
        let bias = with_bias.then(|| random_vec(&mut rng, co));
        let (expect, oh, ow) = naive_conv2d(&x, &d, &weight, co, (kh, kw), stride, (ph, pw), bias.as_deref());

        let spec = ConvSpec {
            in_channels: d.c,
            out_channels: co,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad_h: ph,
            pad_w: pw,
            bias: with_bias,
        };
        let xt = Tensor::new(vec![d.n, d.c, d.h, d.w], x).unwrap();
        let wt = Tensor::new(spec.weight_shape().to_vec(), weight).unwrap();
        let bt = bias.map(|b| Tensor::new(vec![co], b).unwrap());
        let got = conv2d(&xt, &spec, &wt, bt.as_ref()).unwrap();
        assert_eq!(got.shape(), [d.n, co, oh, ow]);
        report.conv_max_err = report.conv_max_err.max(max_abs_diff(got.data(), &expect));
        report.conv_cases += 1;
    }

    while report.pool_cases < cases {
        let d = Dims {
            n: rng.gen_range(1..=2),
            c: rng.gen_range(1..=3),
            h: rng.gen_range(1..=8),
            w: rng.gen_range(1..=8),
        };
        let max = rng.gen_bool(0.5);
        let k = rng.gen_range(1..=4);
        let stride = rng.gen_range(1..=3);
        // padding only on average pooling, at most half the window
        let pad = if max { 0 } else { rng.gen_range(0..=k / 2) };
        if out_extent(d.h, k, stride, pad).is_none() || out_extent(d.w, k, stride, pad).is_none() {
            continue;
        }
        let x = random_vec(&mut rng, d.n * d.c * d.h * d.w);
        let expect = naive_pool(&x, &d, max, k, stride, pad);
        let spec = if max {
            PoolSpec::max(k, stride)
        } else {
            PoolSpec::avg(k, stride, pad)
        };
        assert_eq!(spec.kind == PoolKind::Max, max);
        let xt = Tensor::new(vec![d.n, d.c, d.h, d.w], x).unwrap();
        let got = pool2d(&xt, &spec).unwrap();
        report.pool_max_err = report.pool_max_err.max(max_abs_diff(got.data(), &expect));
        report.pool_cases += 1;
    }
    report
}
