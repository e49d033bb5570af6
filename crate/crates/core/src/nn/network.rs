use std::collections::HashSet;

use super::layer::{ForwardCtx, LayerNode, Mode, ShapeRecord};
use super::param::Parameter;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub trainable: usize,
    /// Running statistics.
    pub non_trainable: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.trainable + self.non_trainable
    }
}

pub fn count_params<T: Scalar>(node: &LayerNode<T>) -> ParamCount {
    let mut count = ParamCount::default();
    node.visit_params(&mut |p| {
        if p.trainable {
            count.trainable += p.numel();
        } else {
            count.non_trainable += p.numel();
        }
    });
    count
}

/// A layer tree with a declared per-sample input shape.
pub struct Network<T> {
    root: LayerNode<T>,
    input_shape: Vec<usize>,
    step: u64,
    last_mode: Option<Mode>,
}

impl<T: Scalar> Network<T> {
    /// Wraps `root`, checking that parameter names are unique and that the declared
    /// input shape flows through every node.
    pub fn new(root: LayerNode<T>, input_shape: Vec<usize>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut dup = None;
        root.visit_params(&mut |p| {
            if !seen.insert(p.name.clone()) && dup.is_none() {
                dup = Some(p.name.clone());
            }
        });
        if let Some(name) = dup {
            return Err(Error::InvalidArgument(format!(
                "parameter name `{name}` registered twice"
            )));
        }
        let net = Self {
            root,
            input_shape,
            step: 0,
            last_mode: None,
        };
        net.trace_shapes(1)?;
        Ok(net)
    }

    pub fn root(&self) -> &LayerNode<T> {
        &self.root
    }

    pub fn root_mut(&mut self) -> &mut LayerNode<T> {
        &mut self.root
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Width of the final output (the logit count for a classifier).
    pub fn output_width(&self) -> usize {
        self.trace_shapes(1)
            .ok()
            .and_then(|r| r.last().map(|r| r.output_shape[1..].iter().product()))
            .unwrap_or_else(|| self.input_shape.iter().product())
    }

    /// Keys the dropout masks of the next train-mode forward.
    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn forward(&mut self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if batch.shape().len() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(
                "input",
                format!(
                    "batch shape {:?} does not match the declared per-sample shape {:?}",
                    batch.shape(),
                    self.input_shape
                ),
            ));
        }
        let ctx = ForwardCtx {
            mode,
            step: self.step,
        };
        self.last_mode = None;
        let out = self.root.forward(batch, &ctx)?;
        self.last_mode = Some(mode);
        Ok(out)
    }

    /// Accumulates parameter gradients for the upstream gradient of the last output.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        match self.last_mode {
            Some(Mode::Train) => self.root.backward(upstream),
            Some(Mode::Eval) => Err(Error::State(
                "backward after an eval-mode forward; run forward in train mode".into(),
            )),
            None => Err(Error::State("backward without a preceding forward".into())),
        }
    }

    pub fn zero_grad(&mut self) {
        self.root.visit_params_mut(&mut |p| p.zero_grad());
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut out = Vec::new();
        self.root.visit_params(&mut |p| out.push(p));
        out
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.root.visit_params_mut(f);
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params().into_iter().find(|p| p.name == name)
    }

    pub fn count_params(&self) -> ParamCount {
        count_params(&self.root)
    }

    /// Σθ² over regularizable parameters.
    pub fn regularizable_sum_squares(&self) -> f64 {
        let mut acc = 0.0;
        self.root.visit_params(&mut |p| {
            if p.regularizable {
                acc += p.value.data().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>();
            }
        });
        acc
    }

    pub fn trace_shapes(&self, batch: usize) -> Result<Vec<ShapeRecord>> {
        let mut input = vec![batch];
        input.extend_from_slice(&self.input_shape);
        let mut records = Vec::new();
        self.root.trace_shapes(&input, &mut records)?;
        Ok(records)
    }

    /// Output of the first auxiliary tap from the last train-mode forward.
    pub fn aux_output(&self) -> Option<&Tensor<T>> {
        fn find<T: Scalar>(node: &LayerNode<T>) -> Option<&Tensor<T>> {
            if let LayerNode::AuxTap(t) = node {
                return t.output();
            }
            node.children().iter().find_map(find)
        }
        find(&self.root)
    }

    /// Upstream gradient for the auxiliary output, consumed by the next `backward`.
    pub fn set_aux_upstream(&mut self, g: Tensor<T>) -> Result<()> {
        fn find<T: Scalar>(node: &mut LayerNode<T>) -> Option<&mut super::layer::AuxTap<T>> {
            if let LayerNode::AuxTap(t) = node {
                return Some(t);
            }
            node.children_mut().iter_mut().find_map(find)
        }
        let tap = find(&mut self.root).ok_or_else(|| Error::State("model has no auxiliary head".into()))?;
        tap.set_upstream(g);
        Ok(())
    }

    pub fn clear_cache(&mut self) {
        self.root.clear_cache();
        self.last_mode = None;
    }

    /// Converts every parameter to another scalar type, keeping names and flags.
    pub fn cast_params_from<U: Scalar>(&mut self, other: &Network<U>) -> Result<()> {
        let src: Vec<_> = other.params().into_iter().map(|p| (p.name.clone(), p.value.cast::<T>())).collect();
        let mut it = src.into_iter();
        let mut err = None;
        self.root.visit_params_mut(&mut |p| match it.next() {
            Some((name, value)) if name == p.name && value.shape() == p.value.shape() => p.value = value,
            _ => {
                err.get_or_insert_with(|| Error::InvalidArgument(format!("parameter `{}` has no counterpart", p.name)));
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{Dense, Sequential};

    fn dense_net(w: &[f64], inputs: usize, outputs: usize, bias: Option<&[f64]>) -> Network<f64> {
        let weight = Tensor::from_f64(vec![inputs, outputs], w).unwrap();
        let bias = bias.map(|b| Tensor::from_f64(vec![outputs], b).unwrap());
        let dense = Dense::new("fc", weight, bias).unwrap();
        let root = LayerNode::Sequential(Sequential::new("", vec![LayerNode::Dense(dense)]));
        Network::new(root, vec![inputs]).unwrap()
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut net = dense_net(&[1., 0., 0., 1.], 2, 2, Some(&[0., 0.]));
        let v = Tensor::from_f64(vec![1, 2], &[3.5, -1.25]).unwrap();
        assert_eq!(net.forward(&v, Mode::Eval).unwrap(), v);
    }

    #[test]
    fn scalar_model_derivative() {
        let mut net = dense_net(&[2.0], 1, 1, None);
        let x = Tensor::from_f64(vec![1, 1], &[3.0]).unwrap();
        net.forward(&x, Mode::Train).unwrap();
        net.backward(&Tensor::full(vec![1, 1], 1.0)).unwrap();
        assert_eq!(net.param("fc.weight").unwrap().grad.data(), &[3.0]);
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let mut net = dense_net(&[0.5, -1., 2., 0.25], 2, 2, Some(&[0.1, 0.2]));
        let x = Tensor::from_f64(vec![2, 2], &[1., 2., -3., 0.5]).unwrap();
        let g = Tensor::from_f64(vec![2, 2], &[1., -1., 0.5, 2.]).unwrap();
        net.forward(&x, Mode::Train).unwrap();
        net.backward(&g).unwrap();
        let once: Vec<_> = net.params().iter().map(|p| p.grad.clone()).collect();
        net.backward(&g).unwrap();
        for (p, g1) in net.params().iter().zip(&once) {
            let doubled = g1.scale(2.0);
            assert_eq!(p.grad, doubled, "{}", p.name);
        }
        net.zero_grad();
        assert!(net.params().iter().all(|p| p.grad.sum() == 0.0));
    }

    #[test]
    fn backward_requires_train_forward() {
        let mut net = dense_net(&[1.0], 1, 1, None);
        let g = Tensor::full(vec![1, 1], 1.0);
        assert!(matches!(net.backward(&g), Err(Error::State(_))));
        net.forward(&Tensor::full(vec![1, 1], 1.0), Mode::Eval).unwrap();
        assert!(matches!(net.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn input_mismatch_is_reported() {
        let mut net = dense_net(&[1.0, 1.0], 2, 1, None);
        let err = net.forward(&Tensor::zeros(vec![1, 3]), Mode::Eval).unwrap_err();
        assert!(err.to_string().contains("input"), "{err}");
    }

    #[test]
    fn empty_model_has_no_parameters() {
        let root = LayerNode::<f32>::Sequential(Sequential::new("", vec![]));
        let net = Network::new(root, vec![4]).unwrap();
        assert_eq!(net.count_params(), ParamCount::default());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let a = Dense::new("fc", Tensor::<f32>::zeros(vec![1, 1]), None).unwrap();
        let b = Dense::new("fc", Tensor::<f32>::zeros(vec![1, 1]), None).unwrap();
        let root = LayerNode::Sequential(Sequential::new("", vec![LayerNode::Dense(a), LayerNode::Dense(b)]));
        assert!(Network::new(root, vec![1]).is_err());
    }
}
