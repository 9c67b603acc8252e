use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_fill, Activation, Parameters, Tensor};
use crate::error::{Error, Result};

/// `y = act(W x + b)` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub activation: Activation,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer {
            activation,
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let mut layer = Self::zeros(input, output, activation);
        glorot_fill(&mut layer.weight, input, output, rng);
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.weight.shape().len() != 2 || self.bias.len() != self.weight.rows() {
            return Err(Error::shape(
                format!("bias of length {}", self.weight.rows()),
                self.bias.len(),
            ));
        }
        Ok(())
    }

    /// Writes pre-activations and outputs; no shape checks.
    #[inline]
    pub(crate) fn forward_into(&self, x: &[f64], pre: &mut [f64], out: &mut [f64]) {
        self.weight.matvec_into(x, pre);
        for ((p, o), b) in pre.iter_mut().zip(out.iter_mut()).zip(self.bias.data()) {
            *p += b;
            *o = self.activation.apply(*p);
        }
    }

    /// Accumulates parameter gradients into `grads` and adds the input
    /// gradient into `grad_in` (when given). `delta` is scratch of output size.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward_into(
        &self,
        x: &[f64],
        pre: &[f64],
        out: &[f64],
        grad_out: &[f64],
        grads: &mut DenseLayer,
        grad_in: Option<&mut [f64]>,
        delta: &mut [f64],
    ) {
        for (((d, g), p), y) in delta.iter_mut().zip(grad_out).zip(pre).zip(out) {
            *d = g * self.activation.derivative(*p, *y);
        }
        grads.weight.outer_acc(delta, x);
        for (gb, d) in grads.bias.data_mut().iter_mut().zip(delta.iter()) {
            *gb += d;
        }
        if let Some(gi) = grad_in {
            self.weight.matvec_t_acc(delta, gi);
        }
    }
}

impl Parameters for DenseLayer {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.weight.data());
        f(self.bias.data());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.weight.data_mut());
        f(self.bias.data_mut());
    }
}

pub fn dense_forward(layer: &DenseLayer, x: &[f64]) -> Result<Vec<f64>> {
    layer.validate()?;
    if x.len() != layer.input_dim() {
        return Err(Error::shape(layer.input_dim(), x.len()));
    }
    let n = layer.output_dim();
    let mut pre = vec![0.0; n];
    let mut out = vec![0.0; n];
    layer.forward_into(x, &mut pre, &mut out);
    Ok(out)
}

/// Returns `(d/dx, d/dparams)` for upstream gradient `grad_out`.
pub fn dense_backward(layer: &DenseLayer, x: &[f64], grad_out: &[f64]) -> Result<(Vec<f64>, DenseLayer)> {
    layer.validate()?;
    if x.len() != layer.input_dim() {
        return Err(Error::shape(layer.input_dim(), x.len()));
    }
    let n = layer.output_dim();
    if grad_out.len() != n {
        return Err(Error::shape(n, grad_out.len()));
    }
    let mut pre = vec![0.0; n];
    let mut out = vec![0.0; n];
    layer.forward_into(x, &mut pre, &mut out);
    let mut grads = layer.zeros_like();
    let mut grad_in = vec![0.0; x.len()];
    let mut delta = vec![0.0; n];
    layer.backward_into(x, &pre, &out, grad_out, &mut grads, Some(&mut grad_in), &mut delta);
    Ok((grad_in, grads))
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Per-layer activations kept from a forward pass; reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    out: Vec<Vec<f64>>,
    grad: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.out.last().map_or(&self.input, Vec::as_slice)
    }
}

impl Mlp {
    /// Layers with the given widths; `hidden` on all but the last layer.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, last: Activation, rng: &mut R) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { hidden };
                DenseLayer::init(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if i > 0 && self.layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::shape(
                    format!("layer {i} input {}", self.layers[i - 1].output_dim()),
                    l.input_dim(),
                ));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), x.len()));
        }
        let mut trace = MlpTrace::default();
        self.forward_traced(x, &mut trace);
        Ok(trace.output().to_vec())
    }

    /// Forward pass recording everything the backward pass needs.
    pub fn forward_traced(&self, x: &[f64], trace: &mut MlpTrace) {
        let n = self.layers.len();
        trace.input.clear();
        trace.input.extend_from_slice(x);
        trace.pre.resize_with(n, Vec::new);
        trace.out.resize_with(n, Vec::new);
        for (i, layer) in self.layers.iter().enumerate() {
            let m = layer.output_dim();
            trace.pre[i].resize(m, 0.0);
            trace.out[i].resize(m, 0.0);
            let (before, after) = trace.out.split_at_mut(i);
            let input = if i == 0 { &trace.input } else { &before[i - 1] };
            layer.forward_into(input, &mut trace.pre[i], &mut after[0]);
        }
    }

    /// Backward pass for the most recent `forward_traced` into `trace`.
    /// Parameter gradients are accumulated into `grads`; the input gradient
    /// is added to `grad_in` when provided.
    pub fn backward_traced(
        &self,
        trace: &mut MlpTrace,
        grad_out: &[f64],
        grads: &mut Mlp,
        grad_in: Option<&mut [f64]>,
    ) {
        let n = self.layers.len();
        trace.grad.resize_with(n + 1, Vec::new);
        trace.delta.resize_with(n, Vec::new);
        trace.grad[n].clear();
        trace.grad[n].extend_from_slice(grad_out);
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let input = if i == 0 { &trace.input } else { &trace.out[i - 1] };
            trace.delta[i].resize(layer.output_dim(), 0.0);
            let (lower, upper) = trace.grad.split_at_mut(i + 1);
            let gin = &mut lower[i];
            let need_input_grad = i > 0;
            if need_input_grad {
                gin.clear();
                gin.resize(layer.input_dim(), 0.0);
            }
            layer.backward_into(
                input,
                &trace.pre[i],
                &trace.out[i],
                &upper[0],
                &mut grads.layers[i],
                if need_input_grad { Some(gin.as_mut_slice()) } else { None },
                &mut trace.delta[i],
            );
            if i == 0 {
                if let Some(gi) = grad_in {
                    layer.weight.matvec_t_acc(&trace.delta[0], gi);
                }
                break;
            }
        }
    }
}

impl Parameters for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.layers {
            l.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input() {
        let layer = DenseLayer {
            activation: Activation::Identity,
            weight: Tensor::identity(2),
            bias: Tensor::zeros(&[2]),
        };
        assert_eq!(dense_forward(&layer, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert!(dense_forward(&layer, &[1.0]).is_err());
    }

    #[test]
    fn tanh_of_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = DenseLayer::init(3, 4, Activation::Tanh, &mut rng);
        assert_eq!(dense_forward(&layer, &[0.0; 3]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for act in [Activation::Elu, Activation::Tanh, Activation::Identity] {
            let mut layer = DenseLayer::init(3, 4, act, &mut rng);
            for b in layer.bias.data_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let up: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (gx, gp) = dense_backward(&layer, &x, &up).unwrap();

            let objective = |l: &DenseLayer, x: &[f64]| -> f64 {
                dense_forward(l, x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
            };
            let flat = layer.flatten();
            let report = grad_check(&flat, &gp.flatten(), 1e-6, |p| {
                let mut l = layer.clone();
                l.assign(p).unwrap();
                objective(&l, &x)
            });
            let tol = if act == Activation::Identity { 1e-8 } else { 1e-4 };
            assert!(report.max_rel_error < tol, "{act:?}: {report:?}");
            let report = grad_check(&x, &gx, 1e-6, |xp| objective(&layer, xp));
            assert!(report.max_rel_error < 1e-4, "{act:?} input: {report:?}");
        }
    }

    #[test]
    fn mlp_traced_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::init(&[5, 7, 6, 3], Activation::Tanh, Activation::Identity, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = [0.1, -0.4, 0.9];
        let f = |m: &Mlp, x: &[f64]| crate::nn::mse(&m.forward(x).unwrap(), &target).unwrap();

        let mut trace = MlpTrace::default();
        mlp.forward_traced(&x, &mut trace);
        let g = crate::nn::mse_grad(trace.output(), &target).unwrap();
        let mut grads = mlp.zeros_like();
        let mut gx = vec![0.0; 5];
        mlp.backward_traced(&mut trace, &g, &mut grads, Some(&mut gx));

        let report = grad_check(&mlp.flatten(), &grads.flatten(), 1e-6, |p| {
            let mut m = mlp.clone();
            m.assign(p).unwrap();
            f(&m, &x)
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        let report = grad_check(&x, &gx, 1e-6, |xp| f(&mlp, xp));
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
