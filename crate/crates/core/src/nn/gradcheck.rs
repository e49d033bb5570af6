//! Finite-difference verification of analytic gradients (64-bit only).

use rand::seq::index::sample;

use super::layer::{ForwardCtx, LayerNode, Mode};
use super::network::Network;
use crate::error::Result;
use crate::rng::{rng_for, str_hash};
use crate::tensor::Tensor;
use crate::train::loss::{cross_entropy, l2_penalty, l2_value};

/// Scalar objective whose gradient is checked.
#[derive(Debug, Clone)]
pub enum CheckLoss {
    /// Sum of every model output.
    SumOfOutputs,
    /// Mean cross-entropy plus `λΣθ²`.
    CrossEntropy { labels: Vec<usize>, lambda_l2: f64 },
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    pub step: f64,
    pub coords_per_param: usize,
    /// Denominator floor for the relative error, so that gradients at the level of
    /// finite-difference round-off are not judged relatively.
    pub abs_floor: f64,
    pub seed: u64,
    pub loss: CheckLoss,
    /// Multiplies the analytic gradient before comparison (1.0 in normal use; a
    /// negative control sets something else and expects failure).
    pub analytic_scale: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            step: 1e-5,
            coords_per_param: 64,
            abs_floor: 1e-6,
            seed: 0,
            loss: CheckLoss::SumOfOutputs,
            analytic_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn objective(net: &Network<f64>, out: &Tensor<f64>, loss: &CheckLoss) -> Result<(f64, Tensor<f64>)> {
    match loss {
        CheckLoss::SumOfOutputs => Ok((out.sum(), Tensor::full(out.shape().to_vec(), 1.0))),
        CheckLoss::CrossEntropy { labels, lambda_l2 } => {
            let (ce, grad) = cross_entropy(out, labels)?;
            Ok((ce + l2_value(net, *lambda_l2), grad))
        }
    }
}

/// The root's top-level stages; parameters in stage `i` only affect stages `i..`.
fn stages(root: &mut LayerNode<f64>) -> Vec<&mut LayerNode<f64>> {
    match root {
        LayerNode::Sequential(s) => s.layers.iter_mut().collect(),
        other => vec![other],
    }
}

fn with_param(stage: &mut LayerNode<f64>, local: usize, f: &mut dyn FnMut(&mut super::Parameter<f64>)) {
    let mut i = 0;
    stage.visit_params_mut(&mut |p| {
        if p.trainable {
            if i == local {
                f(p);
            }
            i += 1;
        }
    });
}

/// Compares analytic gradients of the chosen objective against central differences on
/// up to `coords_per_param` sampled coordinates of every trainable parameter.
///
/// Runs in train mode at the network's current step. Running statistics are restored
/// afterwards; accumulated gradients are left holding the analytic values.
pub fn grad_check(net: &mut Network<f64>, input: &Tensor<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let buffers: Vec<Tensor<f64>> = net
        .params()
        .into_iter()
        .filter(|p| !p.trainable)
        .map(|p| p.value.clone())
        .collect();

    net.zero_grad();
    let out = net.forward(input, Mode::Train)?;
    let (_, upstream) = objective(net, &out, &opts.loss)?;
    net.backward(&upstream)?;
    if let CheckLoss::CrossEntropy { lambda_l2, .. } = opts.loss {
        l2_penalty(net, lambda_l2)?;
    }

    let ctx = ForwardCtx {
        mode: Mode::Train,
        step: net.step(),
    };

    // Inputs to every stage, from one clean pass.
    let mut stage_inputs = Vec::new();
    {
        let mut cur = input.clone();
        for stage in stages(net.root_mut()) {
            stage_inputs.push(cur.clone());
            cur = stage.forward(&cur, &ctx)?;
        }
    }

    // (stage index, local trainable index, name, analytic gradient)
    let mut targets = Vec::new();
    for (si, stage) in stages(net.root_mut()).into_iter().enumerate() {
        let mut local = 0;
        stage.visit_params_mut(&mut |p| {
            if p.trainable {
                targets.push((si, local, p.name.clone(), p.grad.scale(opts.analytic_scale)));
                local += 1;
            }
        });
    }

    let loss_from = |net: &mut Network<f64>, si: usize| -> Result<f64> {
        let mut cur = stage_inputs[si].clone();
        for stage in stages(net.root_mut()).into_iter().skip(si) {
            cur = stage.forward(&cur, &ctx)?;
        }
        Ok(objective(net, &cur, &opts.loss)?.0)
    };

    let mut report = GradCheckReport {
        tolerance: opts.tolerance,
        params: Vec::with_capacity(targets.len()),
    };
    for (si, local, name, analytic) in targets {
        let numel = analytic.numel();
        let coords: Vec<usize> = if numel <= opts.coords_per_param {
            (0..numel).collect()
        } else {
            let mut rng = rng_for(&[opts.seed, str_hash(&name)]);
            let mut picked = sample(&mut rng, numel, opts.coords_per_param).into_vec();
            picked.sort_unstable();
            picked
        };
        let mut check = ParamCheck {
            name,
            checked: coords.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for idx in coords {
            let mut original = 0.0;
            with_param(stages(net.root_mut()).swap_remove(si), local, &mut |p| {
                original = p.value.data()[idx];
                p.value.data_mut()[idx] = original + opts.step;
            });
            let plus = loss_from(net, si)?;
            with_param(stages(net.root_mut()).swap_remove(si), local, &mut |p| {
                p.value.data_mut()[idx] = original - opts.step;
            });
            let minus = loss_from(net, si)?;
            with_param(stages(net.root_mut()).swap_remove(si), local, &mut |p| {
                p.value.data_mut()[idx] = original;
            });
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.data()[idx];
            let err = relative_error(a, numeric, opts.abs_floor);
            if err > check.max_rel_error || check.checked == 1 {
                check.max_rel_error = check.max_rel_error.max(err);
                check.worst_index = idx;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }

    let mut restore = buffers.into_iter();
    net.visit_params_mut(&mut |p| {
        if !p.trainable {
            if let Some(v) = restore.next() {
                p.value = v;
            }
        }
    });
    net.clear_cache();
    Ok(report)
}
