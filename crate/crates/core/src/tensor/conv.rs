use rayon::prelude::*;

use super::{window_extent, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};

/// Geometry of a 2-D convolution. Padding is symmetric per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn square(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad_h: pad,
            pad_w: pad,
            bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel_h == 0
            || self.kernel_w == 0
            || self.stride == 0
        {
            return Err(Error::InvalidArgument(format!(
                "conv extents and stride must be ≥ 1: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn weight_numel(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = window_extent(h, self.kernel_h, self.stride, self.pad_h);
        let ow = window_extent(w, self.kernel_w, self.stride, self.pad_w);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(
                "conv2d",
                format!(
                    "{h}×{w} input with {}×{} kernel, stride {}, padding ({}, {}) gives output extent < 1",
                    self.kernel_h, self.kernel_w, self.stride, self.pad_h, self.pad_w
                ),
            )),
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.pad_h == 0 && self.pad_w == 0
    }
}

pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

fn check_operands<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
) -> Result<(usize, Geometry)> {
    spec.validate()?;
    let (n, c, h, w) = input.dims4("conv2d")?;
    if c != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, convolution expects {}", spec.in_channels),
        ));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight shape {:?} does not match {:?}",
                weight.shape(),
                spec.weight_shape()
            ),
        ));
    }
    let (oh, ow) = spec.output_hw(h, w)?;
    Ok((n, Geometry { c, h, w, oh, ow }))
}

fn im2col<T: Scalar>(x: &[T], spec: &ConvSpec, g: &Geometry, cols: &mut [T]) {
    let plane = g.oh * g.ow;
    let (kh, kw, s) = (spec.kernel_h, spec.kernel_w, spec.stride);
    for ch in 0..g.c {
        let src = &x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for i in 0..kh {
            for j in 0..kw {
                let row = ((ch * kh + i) * kw + j) * plane;
                let dst = &mut cols[row..row + plane];
                for oy in 0..g.oh {
                    let iy = (oy * s + i) as isize - spec.pad_h as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + j) as isize - spec.pad_w as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], spec: &ConvSpec, g: &Geometry, dx: &mut [T]) {
    let plane = g.oh * g.ow;
    let (kh, kw, s) = (spec.kernel_h, spec.kernel_w, spec.stride);
    for ch in 0..g.c {
        let dst = &mut dx[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for i in 0..kh {
            for j in 0..kw {
                let row = ((ch * kh + i) * kw + j) * plane;
                let src = &cols[row..row + plane];
                for oy in 0..g.oh {
                    let iy = (oy * s + i) as isize - spec.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * s + j) as isize - spec.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip) over an `N×C×H×W` batch.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, g) = check_operands(input, spec, weight)?;
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", b.shape(), spec.out_channels),
            ));
        }
    }
    let co = spec.out_channels;
    let ckk = g.c * spec.kernel_h * spec.kernel_w;
    let plane = g.oh * g.ow;
    let in_stride = g.c * g.h * g.w;
    let mut out = vec![T::zero(); n * co * plane];
    let x = input.data();
    let wdata = weight.data();
    let pointwise = spec.is_pointwise();

    out.par_chunks_mut(co * plane)
        .enumerate()
        .for_each(|(b, out_n)| {
            let x_n = &x[b * in_stride..(b + 1) * in_stride];
            if pointwise {
                gemm(co, ckk, plane, wdata, false, x_n, false, out_n, false);
            } else {
                let mut cols = vec![T::zero(); ckk * plane];
                im2col(x_n, spec, &g, &mut cols);
                gemm(co, ckk, plane, wdata, false, &cols, false, out_n, false);
            }
            if let Some(bias) = bias {
                for (ch, &bv) in bias.data().iter().enumerate() {
                    out_n[ch * plane..(ch + 1) * plane]
                        .iter_mut()
                        .for_each(|v| *v += bv);
                }
            }
        });
    Tensor::new(vec![n, co, g.oh, g.ow], out)?.ensure_finite("conv2d")
}

/// Gradients of a convolution with respect to its input, weight and (when enabled) bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let (n, g) = check_operands(input, spec, weight)?;
    let co = spec.out_channels;
    if grad_out.shape() != [n, co, g.oh, g.ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "upstream gradient {:?}, expected {:?}",
                grad_out.shape(),
                [n, co, g.oh, g.ow]
            ),
        ));
    }
    let ckk = g.c * spec.kernel_h * spec.kernel_w;
    let plane = g.oh * g.ow;
    let in_stride = g.c * g.h * g.w;
    let x = input.data();
    let dy = grad_out.data();
    let wdata = weight.data();
    let pointwise = spec.is_pointwise();

    let mut dw = vec![T::zero(); co * ckk];
    let mut dx = vec![T::zero(); input.numel()];
    let mut cols = vec![T::zero(); if pointwise { 0 } else { ckk * plane }];
    let mut dcols = vec![T::zero(); if pointwise { 0 } else { ckk * plane }];
    for b in 0..n {
        let x_n = &x[b * in_stride..(b + 1) * in_stride];
        let dy_n = &dy[b * co * plane..(b + 1) * co * plane];
        let dx_n = &mut dx[b * in_stride..(b + 1) * in_stride];
        if pointwise {
            gemm(co, plane, ckk, dy_n, false, x_n, true, &mut dw, true);
            gemm(ckk, co, plane, wdata, true, dy_n, false, dx_n, false);
        } else {
            im2col(x_n, spec, &g, &mut cols);
            gemm(co, plane, ckk, dy_n, false, &cols, true, &mut dw, true);
            gemm(ckk, co, plane, wdata, true, dy_n, false, &mut dcols, false);
            col2im(&dcols, spec, &g, dx_n);
        }
    }
    let bias = if spec.bias {
        let mut db = vec![T::zero(); co];
        for b in 0..n {
            for (ch, acc) in db.iter_mut().enumerate() {
                let start = (b * co + ch) * plane;
                *acc += dy[start..start + plane].iter().copied().sum::<T>();
            }
        }
        Some(Tensor::new(vec![co], db)?.ensure_finite("conv2d_backward")?)
    } else {
        None
    };
    Ok(Conv2dGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?.ensure_finite("conv2d_backward")?,
        weight: Tensor::new(spec.weight_shape().to_vec(), dw)?.ensure_finite("conv2d_backward")?,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_sums_windows() {
        let x = Tensor::<f64>::from_f64(vec![1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.])
            .unwrap();
        let spec = ConvSpec::square(1, 1, 2, 1, 0);
        let w = Tensor::<f64>::full(vec![1, 1, 2, 2], 1.0);
        let y = conv2d(&x, &spec, &w, None).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[12., 16., 24., 28.]);
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = Tensor::<f32>::full(vec![2, 3, 5, 4], 1.5);
        let spec = ConvSpec::square(3, 4, 3, 1, 1);
        let y = conv2d(&x, &spec, &Tensor::zeros(spec.weight_shape().to_vec()), None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let x = Tensor::<f32>::from_f64(vec![1, 1, 2, 3], &[1., -2., 3., 4., 5., -6.]).unwrap();
        let spec = ConvSpec::square(1, 1, 1, 1, 0);
        let y = conv2d(&x, &spec, &Tensor::full(vec![1, 1, 1, 1], 1.0), None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn bias_is_added_per_channel() {
        let x = Tensor::<f64>::zeros(vec![1, 1, 2, 2]);
        let mut spec = ConvSpec::square(1, 2, 1, 1, 0);
        spec.bias = true;
        let w = Tensor::zeros(spec.weight_shape().to_vec());
        let b = Tensor::from_f64(vec![2], &[1.0, -3.0]).unwrap();
        let y = conv2d(&x, &spec, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[1., 1., 1., 1., -3., -3., -3., -3.]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(vec![1, 2, 4, 4]);
        let spec = ConvSpec::square(3, 1, 3, 1, 0);
        let err = conv2d(&x, &spec, &Tensor::zeros(spec.weight_shape().to_vec()), None);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn empty_output_is_rejected() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 2]);
        let spec = ConvSpec::square(1, 1, 3, 1, 0);
        assert!(conv2d(&x, &spec, &Tensor::zeros(spec.weight_shape().to_vec()), None).is_err());
    }

    #[test]
    fn strided_asymmetric_geometry() {
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel_h: 1,
            kernel_w: 7,
            stride: 1,
            pad_h: 0,
            pad_w: 3,
            bias: false,
        };
        assert_eq!(spec.output_hw(17, 17).unwrap(), (17, 17));
        assert_eq!(ConvSpec::square(3, 32, 3, 2, 0).output_hw(299, 299).unwrap(), (149, 149));
    }
}
