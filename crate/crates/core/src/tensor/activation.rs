use super::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn activation<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    let out = match kind {
        Activation::Relu => input.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Sigmoid => input.map(sigmoid_scalar),
    };
    out.ensure_finite("activation")
}

/// `saved` is the forward input for ReLU and the forward output for sigmoid.
pub fn activation_backward<T: Scalar>(
    saved: &Tensor<T>,
    kind: Activation,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    saved.check_same_shape(grad_out, "activation_backward")?;
    let data = saved
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| match kind {
            Activation::Relu => {
                if s > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => g * s * (T::one() - s),
        })
        .collect();
    Tensor::new(saved.shape().to_vec(), data)?.ensure_finite("activation_backward")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definition_cases() {
        let x = Tensor::<f64>::from_f64(vec![3], &[-2.0, 3.0, 0.0]).unwrap();
        assert_eq!(activation(&x, Activation::Relu).unwrap().data(), &[0.0, 3.0, 0.0]);
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!((sigmoid_scalar(3.0f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid_scalar(-1000.0f64) >= 0.0);
        assert_eq!(sigmoid_scalar(1000.0f64), 1.0);
    }

    #[test]
    fn relu_gradient_is_zero_at_zero() {
        let x = Tensor::<f64>::from_f64(vec![3], &[-1.0, 0.0, 2.0]).unwrap();
        let g = Tensor::<f64>::full(vec![3], 1.0);
        let dx = activation_backward(&x, Activation::Relu, &g).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);
    }
}
