use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per trainable parameter, in registry order.
#[derive(Clone)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Network<T>) -> Self {
        let shapes: Vec<Vec<usize>> = net
            .params()
            .into_iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.shape().to_vec())
            .collect();
        Self {
            m: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: shapes.into_iter().map(Tensor::zeros).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update from the accumulated gradients. Nothing changes if
/// any gradient is non-finite.
pub fn adam_step<T: Scalar>(state: &mut AdamState<T>, net: &mut Network<T>, cfg: &AdamConfig) -> Result<()> {
    let trainable: Vec<_> = net.params().into_iter().filter(|p| p.trainable).collect();
    if trainable.len() != state.m.len() {
        return Err(Error::State(format!(
            "optimizer tracks {} parameters, model has {}",
            state.m.len(),
            trainable.len()
        )));
    }
    for (p, m) in trainable.iter().zip(&state.m) {
        if p.grad.shape() != m.shape() {
            return Err(Error::shape(p.name.clone(), "optimizer state shape differs from the parameter"));
        }
        if !p.grad.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = cfg.learning_rate;
    let eps = cfg.eps;
    let cast = T::from_f64_lossy;
    let (b1t, b2t, ob1, ob2) = (cast(b1), cast(b2), cast(1.0 - b1), cast(1.0 - b2));

    let mut i = 0;
    let (ms, vs) = (&mut state.m, &mut state.v);
    net.visit_params_mut(&mut |p| {
        if !p.trainable {
            return;
        }
        let m = ms[i].data_mut();
        let v = vs[i].data_mut();
        let g = p.grad.data();
        for (((theta, &g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1t * *m + ob1 * g;
            *v = b2t * *v + ob2 * g * g;
            let m_hat = m.to_f64_lossy() / c1;
            let v_hat = v.to_f64_lossy() / c2;
            *theta -= cast(lr * m_hat / (v_hat.sqrt() + eps));
        }
        i += 1;
    });
    Ok(())
}
