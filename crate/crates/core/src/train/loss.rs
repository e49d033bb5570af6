use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `L(θ) = L′(θ) + λΣθᵢ²`, with each term as computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub data: f64,
    pub penalty: f64,
}

impl LossBreakdown {
    pub fn new(data: f64, penalty: f64) -> Self {
        Self {
            total: data + penalty,
            data,
            penalty,
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = logits.dims2("softmax")?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean over the batch of `−log softmax(logits)[label]`, and its gradient w.r.t. the logits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, k) = logits.dims2("cross_entropy")?;
    if labels.len() != n {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for {n} rows of logits", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let row: Vec<f64> = row.iter().map(|v| v.to_f64_lossy()).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += (log_z - row[label]) * inv_n;
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push(T::from_f64_lossy((p - target) * inv_n));
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross_entropy".into()));
    }
    Ok((loss, Tensor::new(vec![n, k], grad)?))
}

/// `λ·Σθᵢ²` over regularizable parameters, without touching gradients.
pub fn l2_value<T: Scalar>(net: &Network<T>, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda * net.regularizable_sum_squares()
}

/// Returns `λ·Σθᵢ²` over regularizable parameters and adds `2λθᵢ` to each of their gradients.
pub fn l2_penalty<T: Scalar>(net: &mut Network<T>, lambda: f64) -> Result<f64> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("λ must be ≥ 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let mut sum_sq = 0.0;
    let two_lambda = T::from_f64_lossy(2.0 * lambda);
    net.visit_params_mut(&mut |p| {
        if !p.regularizable {
            return;
        }
        let value = p.value.data();
        sum_sq += value.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>();
        let grad = p.grad.data_mut();
        for (g, &v) in grad.iter_mut().zip(value) {
            *g += two_lambda * v;
        }
    });
    Ok(lambda * sum_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, LayerNode, Sequential};

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::<f64>::zeros(vec![3, 2]);
        let (loss, _) = cross_entropy(&logits, &[0, 1, 1]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_cases() {
        let l = Tensor::<f64>::from_f64(vec![1, 2], &[10.0, -10.0]).unwrap();
        let (loss, _) = cross_entropy(&l, &[0]).unwrap();
        let expect = (-20f64).exp().ln_1p();
        assert!((loss - expect).abs() < 1e-15);
        assert!((loss - 2.06e-9).abs() < 1e-11);

        let l = Tensor::<f64>::from_f64(vec![1, 2], &[1.0, 2.0]).unwrap();
        let (loss, grad) = cross_entropy(&l, &[1]).unwrap();
        assert!((loss - (-1f64).exp().ln_1p()).abs() < 1e-12);
        assert!((loss - 0.313262).abs() < 1e-6);
        assert!((grad.data()[0] + grad.data()[1]).abs() < 1e-15);
    }

    #[test]
    fn label_out_of_range() {
        let l = Tensor::<f32>::zeros(vec![1, 2]);
        assert!(cross_entropy(&l, &[2]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let l = Tensor::<f64>::from_f64(vec![2, 3], &[1., 2., 3., 1000., 0., -1000.]).unwrap();
        let p = softmax(&l).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn net_with_weights(values: &[f64]) -> Network<f64> {
        let w = Tensor::from_f64(vec![values.len(), 1], values).unwrap();
        let dense = Dense::new("fc", w, Some(Tensor::full(vec![1], 5.0))).unwrap();
        Network::new(LayerNode::Sequential(Sequential::new("", vec![LayerNode::Dense(dense)])), vec![values.len()]).unwrap()
    }

    #[test]
    fn l2_hand_arithmetic() {
        let mut net = net_with_weights(&[1.0, 2.0]);
        let penalty = l2_penalty(&mut net, 0.1).unwrap();
        assert!((penalty - 0.5).abs() < 1e-12);
        let g = net.param("fc.weight").unwrap().grad.data().to_vec();
        assert!((g[0] - 0.2).abs() < 1e-12 && (g[1] - 0.4).abs() < 1e-12);
        // the bias is not regularized
        assert_eq!(net.param("fc.bias").unwrap().grad.data(), &[0.0]);
    }

    #[test]
    fn l2_zero_cases() {
        let mut net = net_with_weights(&[0.0, 0.0]);
        assert_eq!(l2_penalty(&mut net, 0.3).unwrap(), 0.0);
        let mut net = net_with_weights(&[1.0, 2.0]);
        assert_eq!(l2_penalty(&mut net, 0.0).unwrap(), 0.0);
        assert!(net.params().iter().all(|p| p.grad.sum() == 0.0));
        let b = LossBreakdown::new(0.25, 0.0);
        assert_eq!(b.total, b.data + b.penalty);
    }
}
