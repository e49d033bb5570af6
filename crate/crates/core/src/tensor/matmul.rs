use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};

/// `c = a · b` for `a: M×K`, `b: K×N`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner extents disagree: {:?} × {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
    Tensor::new(vec![m, n], out)?.ensure_finite("matmul")
}

/// Returns `(dA, dB) = (dC · Bᵀ, Aᵀ · dC)`.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k) = a.dims2("matmul_backward")?;
    let (k2, n) = b.dims2("matmul_backward")?;
    if k != k2 || grad_out.shape() != [m, n] {
        return Err(Error::shape(
            "matmul_backward",
            format!(
                "operands {:?} × {:?} do not produce upstream gradient {:?}",
                a.shape(),
                b.shape(),
                grad_out.shape()
            ),
        ));
    }
    let mut da = vec![T::zero(); m * k];
    gemm(m, n, k, grad_out.data(), false, b.data(), true, &mut da, false);
    let mut db = vec![T::zero(); k * n];
    gemm(k, m, n, a.data(), true, grad_out.data(), false, &mut db, false);
    Ok((
        Tensor::new(vec![m, k], da)?.ensure_finite("matmul_backward")?,
        Tensor::new(vec![k, n], db)?.ensure_finite("matmul_backward")?,
    ))
}
