use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A named tensor owned by a layer, with its accumulated gradient.
///
/// Running statistics are stored as non-trainable parameters so they travel with
/// checkpoints; they are never regularized.
#[derive(Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub regularizable: bool,
    pub trainable: bool,
}

impl<T: Scalar> Parameter<T> {
    /// Convolution or dense weight: trained and subject to the L2 penalty.
    pub fn weight(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self::with_flags(name, value, true, true)
    }

    /// Bias or batch-norm scale/shift: trained, not penalized.
    pub fn affine(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self::with_flags(name, value, true, false)
    }

    /// Running statistic: carried in checkpoints, never trained.
    pub fn buffer(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self::with_flags(name, value, false, false)
    }

    fn with_flags(name: impl Into<String>, value: Tensor<T>, trainable: bool, regularizable: bool) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self {
            name: name.into(),
            value,
            grad,
            regularizable,
            trainable,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub(crate) fn accumulate(&mut self, delta: &Tensor<T>) -> crate::Result<()> {
        let delta = if delta.shape() == self.grad.shape() {
            delta.clone()
        } else {
            delta.reshape(self.grad.shape().to_vec())?
        };
        self.grad.add_assign(&delta)
    }
}

impl<T: Scalar> std::fmt::Debug for Parameter<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Parameter")
            .field("name", &self.name)
            .field("shape", &self.value.shape())
            .field("trainable", &self.trainable)
            .field("regularizable", &self.regularizable)
            .finish()
    }
}
