use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Saved state for [`batchnorm_backward`].
#[derive(Clone)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: BnMode,
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Per-channel batch normalization of an `N×C×H×W` batch.
///
/// Train mode uses the biased batch variance for normalization; the running variance is
/// updated with the unbiased estimate (`running ← (1−momentum)·running + momentum·batch`).
#[allow(clippy::too_many_arguments)]
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    eps: T,
    momentum: T,
    mode: BnMode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, h, w) = input.dims4("batchnorm")?;
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", &*running_mean),
        ("running_var", &*running_var),
    ] {
        if t.shape() != [c] {
            return Err(Error::shape(
                "batchnorm",
                format!("{name} has shape {:?}, expected [{c}]", t.shape()),
            ));
        }
    }
    if eps <= T::zero() {
        return Err(Error::InvalidArgument("batchnorm eps must be > 0".into()));
    }
    let plane = h * w;
    let count = n * plane;
    if mode == BnMode::Train && count == 0 {
        return Err(Error::shape("batchnorm", "zero-extent batch in train mode"));
    }
    let x = input.data();
    let (mean, var) = match mode {
        BnMode::Train => {
            let m = T::from_usize(count).expect("count");
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut acc = T::zero();
                for b in 0..n {
                    let s = (b * c + ch) * plane;
                    acc += x[s..s + plane].iter().copied().sum::<T>();
                }
                let mu = acc / m;
                let mut sq = T::zero();
                for b in 0..n {
                    let s = (b * c + ch) * plane;
                    sq += x[s..s + plane].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
                mean[ch] = mu;
                var[ch] = sq / m;
            }
            let keep = T::one() - momentum;
            let unbias = if count > 1 {
                m / (m - T::one())
            } else {
                T::one()
            };
            for (r, &mu) in running_mean.data_mut().iter_mut().zip(&mean) {
                *r = keep * *r + momentum * mu;
            }
            for (r, &v) in running_var.data_mut().iter_mut().zip(&var) {
                *r = keep * *r + momentum * v * unbias;
            }
            (mean, var)
        }
        BnMode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let (g, bt) = (gamma.data(), beta.data());
    for b in 0..n {
        for ch in 0..c {
            let s = (b * c + ch) * plane;
            for i in s..s + plane {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = g[ch] * xh + bt[ch];
            }
        }
    }
    let out = Tensor::new(input.shape().to_vec(), out)?.ensure_finite("batchnorm")?;
    Ok((
        out,
        BatchNormCache {
            xhat: Tensor::new(input.shape().to_vec(), xhat)?,
            inv_std,
            mode,
        },
    ))
}

pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    grad_out.check_same_shape(&cache.xhat, "batchnorm_backward")?;
    let (n, c, h, w) = grad_out.dims4("batchnorm_backward")?;
    let plane = h * w;
    let m = T::from_usize(n * plane).expect("count");
    let dy = grad_out.data();
    let xh = cache.xhat.data();
    let g = gamma.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let s = (b * c + ch) * plane;
            for i in s..s + plane {
                dbeta[ch] += dy[i];
                dgamma[ch] += dy[i] * xh[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let s = (b * c + ch) * plane;
            let scale = g[ch] * cache.inv_std[ch];
            match cache.mode {
                BnMode::Train => {
                    // dx = γ·σ⁻¹/M · (M·dy − Σdy − x̂·Σ(dy·x̂))
                    let k = scale / m;
                    for i in s..s + plane {
                        dx[i] = k * (m * dy[i] - dbeta[ch] - xh[i] * dgamma[ch]);
                    }
                }
                BnMode::Eval => {
                    for i in s..s + plane {
                        dx[i] = scale * dy[i];
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape().to_vec(), dx)?.ensure_finite("batchnorm_backward")?,
        gamma: Tensor::new(vec![c], dgamma)?,
        beta: Tensor::new(vec![c], dbeta)?,
    })
}
