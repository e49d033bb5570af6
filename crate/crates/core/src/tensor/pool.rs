use super::{window_extent, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    /// Window mean; padded cells count as zeros in the divisor.
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub fn max(window: usize, stride: usize) -> Self {
        Self {
            kind: PoolKind::Max,
            window,
            stride,
            padding: 0,
        }
    }

    pub fn avg(window: usize, stride: usize, padding: usize) -> Self {
        Self {
            kind: PoolKind::Avg,
            window,
            stride,
            padding,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "pool window and stride must be ≥ 1: {self:?}"
            )));
        }
        match (
            window_extent(h, self.window, self.stride, self.padding),
            window_extent(w, self.window, self.stride, self.padding),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(
                "pool2d",
                format!(
                    "{h}×{w} input with window {}, stride {}, padding {} gives output extent < 1",
                    self.window, self.stride, self.padding
                ),
            )),
        }
    }
}

/// Visits every in-bounds cell of the window anchored at output `(oy, ox)`.
#[inline]
fn for_window(
    spec: &PoolSpec,
    h: usize,
    w: usize,
    oy: usize,
    ox: usize,
    mut f: impl FnMut(usize),
) {
    let y0 = (oy * spec.stride) as isize - spec.padding as isize;
    let x0 = (ox * spec.stride) as isize - spec.padding as isize;
    for dy in 0..spec.window as isize {
        let y = y0 + dy;
        if y < 0 || y >= h as isize {
            continue;
        }
        for dx in 0..spec.window as isize {
            let x = x0 + dx;
            if x >= 0 && x < w as isize {
                f(y as usize * w + x as usize);
            }
        }
    }
}

/// Index (within the plane) of the first maximum of a window, in scan order.
fn argmax_in_window<T: Scalar>(
    plane: &[T],
    spec: &PoolSpec,
    h: usize,
    w: usize,
    oy: usize,
    ox: usize,
) -> usize {
    let mut best: Option<(usize, T)> = None;
    for_window(spec, h, w, oy, ox, |idx| {
        let v = plane[idx];
        match best {
            Some((_, bv)) if v.partial_cmp(&bv) != Some(std::cmp::Ordering::Greater) => {}
            _ => best = Some((idx, v)),
        }
    });
    best.expect("window overlaps the input").0
}

pub fn pool2d<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("pool2d")?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let area = T::from_usize(spec.window * spec.window).expect("window area");
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in input.data().chunks_exact(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let v = match spec.kind {
                    PoolKind::Max => plane[argmax_in_window(plane, spec, h, w, oy, ox)],
                    PoolKind::Avg => {
                        let mut acc = T::zero();
                        for_window(spec, h, w, oy, ox, |idx| acc += plane[idx]);
                        acc / area
                    }
                };
                out.push(v);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)?.ensure_finite("pool2d")
}

/// Max routes the gradient to the first argmax; avg spreads it evenly over the window.
pub fn pool2d_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &PoolSpec,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("pool2d_backward")?;
    let (oh, ow) = spec.output_hw(h, w)?;
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::shape(
            "pool2d_backward",
            format!(
                "upstream gradient {:?}, expected {:?}",
                grad_out.shape(),
                [n, c, oh, ow]
            ),
        ));
    }
    let area = T::from_usize(spec.window * spec.window).expect("window area");
    let mut dx = vec![T::zero(); input.numel()];
    let planes = input.data().chunks_exact(h * w);
    let grads = grad_out.data().chunks_exact(oh * ow);
    for ((plane, g), d) in planes.zip(grads).zip(dx.chunks_exact_mut(h * w)) {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[oy * ow + ox];
                match spec.kind {
                    PoolKind::Max => d[argmax_in_window(plane, spec, h, w, oy, ox)] += gv,
                    PoolKind::Avg => {
                        let share = gv / area;
                        for_window(spec, h, w, oy, ox, |idx| d[idx] += share);
                    }
                }
            }
        }
    }
    Tensor::new(input.shape().to_vec(), dx)?.ensure_finite("pool2d_backward")
}

/// Mean over each `H×W` plane: `N×C×H×W → N×C`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("global_avg_pool")?;
    let count = T::from_usize(h * w).expect("plane size");
    let out = input
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().copied().sum::<T>() / count)
        .collect();
    Tensor::new(vec![n, c], out)?.ensure_finite("global_avg_pool")
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape[..] else {
        return Err(Error::shape(
            "global_avg_pool_backward",
            format!("expected rank-4 input shape, got {input_shape:?}"),
        ));
    };
    if grad_out.shape() != [n, c] {
        return Err(Error::shape(
            "global_avg_pool_backward",
            format!("upstream gradient {:?}, expected [{n}, {c}]", grad_out.shape()),
        ));
    }
    let count = T::from_usize(h * w).expect("plane size");
    let mut dx = Vec::with_capacity(n * c * h * w);
    for &g in grad_out.data() {
        let share = g / count;
        dx.extend(std::iter::repeat_n(share, h * w));
    }
    Tensor::new(input_shape.to_vec(), dx)
}
