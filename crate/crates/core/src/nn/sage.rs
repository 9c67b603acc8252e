use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_fill, Activation, Parameters, Tensor};
use crate::error::{Error, Result};
use crate::graph::Adjacency;

/// GraphSAGE convolution with mean aggregation:
/// `h_i' = act(W_self h_i + W_neigh mean_{j in N(i)} h_j + b)`.
/// Nodes without neighbours aggregate to the zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageLayer {
    pub activation: Activation,
    pub w_self: Tensor,
    pub w_neigh: Tensor,
    pub bias: Tensor,
}

/// Intermediate values of one SAGE forward pass over `L` nodes (row-major).
#[derive(Debug, Clone, Default)]
pub struct SageTrace {
    pub agg: Vec<f64>,
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

impl SageLayer {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        SageLayer {
            activation,
            w_self: Tensor::zeros(&[output, input]),
            w_neigh: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let mut layer = Self::zeros(input, output, activation);
        glorot_fill(&mut layer.w_self, input, output, rng);
        glorot_fill(&mut layer.w_neigh, input, output, rng);
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.w_self.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_self.rows()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.w_self.shape() != self.w_neigh.shape() || self.bias.len() != self.w_self.rows() {
            return Err(Error::shape(
                format!("w_neigh {:?}, bias {}", self.w_self.shape(), self.w_self.rows()),
                format!("w_neigh {:?}, bias {}", self.w_neigh.shape(), self.bias.len()),
            ));
        }
        Ok(())
    }

    /// `x` is `L x in` row-major; no shape checks.
    pub(crate) fn forward_traced(&self, x: &[f64], adj: &Adjacency, trace: &mut SageTrace) {
        let (din, dout) = (self.input_dim(), self.output_dim());
        let l = adj.len();
        trace.agg.clear();
        trace.agg.resize(l * din, 0.0);
        mean_aggregate_into(x, adj, din, &mut trace.agg);
        trace.pre.resize(l * dout, 0.0);
        trace.out.resize(l * dout, 0.0);
        let mut tmp = vec![0.0; dout];
        for i in 0..l {
            let pre = &mut trace.pre[i * dout..(i + 1) * dout];
            self.w_self.matvec_into(&x[i * din..(i + 1) * din], pre);
            self.w_neigh.matvec_into(&trace.agg[i * din..(i + 1) * din], &mut tmp);
            for ((p, t), b) in pre.iter_mut().zip(&tmp).zip(self.bias.data()) {
                *p += t + b;
            }
            for (o, p) in trace.out[i * dout..(i + 1) * dout].iter_mut().zip(pre.iter()) {
                *o = self.activation.apply(*p);
            }
        }
    }

    /// Accumulates parameter gradients and, when given, adds `d/dx` into `grad_x`.
    pub(crate) fn backward_traced(
        &self,
        x: &[f64],
        adj: &Adjacency,
        trace: &SageTrace,
        grad_out: &[f64],
        grads: &mut SageLayer,
        grad_x: Option<&mut [f64]>,
    ) {
        let (din, dout) = (self.input_dim(), self.output_dim());
        let l = adj.len();
        let mut delta = vec![0.0; dout];
        let mut grad_agg = vec![0.0; l * din];
        let mut grad_x = grad_x;
        for i in 0..l {
            let rows = i * dout..(i + 1) * dout;
            for (((d, g), p), y) in delta
                .iter_mut()
                .zip(&grad_out[rows.clone()])
                .zip(&trace.pre[rows.clone()])
                .zip(&trace.out[rows])
            {
                *d = g * self.activation.derivative(*p, *y);
            }
            let xi = &x[i * din..(i + 1) * din];
            let ai = &trace.agg[i * din..(i + 1) * din];
            grads.w_self.outer_acc(&delta, xi);
            grads.w_neigh.outer_acc(&delta, ai);
            for (gb, d) in grads.bias.data_mut().iter_mut().zip(&delta) {
                *gb += d;
            }
            if let Some(gx) = grad_x.as_deref_mut() {
                self.w_self.matvec_t_acc(&delta, &mut gx[i * din..(i + 1) * din]);
                self.w_neigh
                    .matvec_t_acc(&delta, &mut grad_agg[i * din..(i + 1) * din]);
            }
        }
        if let Some(gx) = grad_x {
            for i in 0..l {
                let deg = adj.neighbours(i).count();
                if deg == 0 {
                    continue;
                }
                let w = 1.0 / deg as f64;
                for j in adj.neighbours(i) {
                    for k in 0..din {
                        gx[j * din + k] += w * grad_agg[i * din + k];
                    }
                }
            }
        }
    }
}

impl Parameters for SageLayer {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.w_self.data());
        f(self.w_neigh.data());
        f(self.bias.data());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.w_self.data_mut());
        f(self.w_neigh.data_mut());
        f(self.bias.data_mut());
    }
}

fn mean_aggregate_into(x: &[f64], adj: &Adjacency, din: usize, agg: &mut [f64]) {
    for i in 0..adj.len() {
        let mut deg = 0usize;
        let row = &mut agg[i * din..(i + 1) * din];
        for j in adj.neighbours(i) {
            deg += 1;
            for (a, v) in row.iter_mut().zip(&x[j * din..(j + 1) * din]) {
                *a += v;
            }
        }
        if deg > 0 {
            let w = 1.0 / deg as f64;
            row.iter_mut().for_each(|a| *a *= w);
        }
    }
}

/// Row-wise mean of neighbour features (`L x d`); zero rows for isolated nodes.
pub fn mean_aggregate(x: &Tensor, adj: &Adjacency) -> Result<Tensor> {
    check_inputs(x, adj, x.cols())?;
    let mut agg = Tensor::zeros(&[x.rows(), x.cols()]);
    mean_aggregate_into(x.data(), adj, x.cols(), agg.data_mut());
    Ok(agg)
}

fn check_inputs(x: &Tensor, adj: &Adjacency, din: usize) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != din {
        return Err(Error::shape(format!("L x {din} features"), format!("{:?}", x.shape())));
    }
    if x.rows() != adj.len() {
        return Err(Error::shape(format!("{} nodes", adj.len()), x.rows()));
    }
    Ok(())
}

pub fn sage_forward(layer: &SageLayer, x: &Tensor, adj: &Adjacency) -> Result<Tensor> {
    layer.validate()?;
    check_inputs(x, adj, layer.input_dim())?;
    let mut trace = SageTrace::default();
    layer.forward_traced(x.data(), adj, &mut trace);
    Tensor::from_vec(&[x.rows(), layer.output_dim()], trace.out)
}

/// Returns `(d/dX, d/dparams)` for upstream gradient `grad_out` (`L x out`).
pub fn sage_backward(
    layer: &SageLayer,
    x: &Tensor,
    adj: &Adjacency,
    grad_out: &Tensor,
) -> Result<(Tensor, SageLayer)> {
    layer.validate()?;
    check_inputs(x, adj, layer.input_dim())?;
    if grad_out.shape() != [x.rows(), layer.output_dim()] {
        return Err(Error::shape(
            format!("[{}, {}]", x.rows(), layer.output_dim()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut trace = SageTrace::default();
    layer.forward_traced(x.data(), adj, &mut trace);
    let mut grads = layer.zeros_like();
    let mut gx = Tensor::zeros(x.shape());
    layer.backward_traced(x.data(), adj, &trace, grad_out.data(), &mut grads, Some(gx.data_mut()));
    Ok((gx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::nn::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_layer(rng: &mut ChaCha8Rng, din: usize, dout: usize, act: Activation) -> SageLayer {
        let mut layer = SageLayer::init(din, dout, act, rng);
        for b in layer.bias.data_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
        layer
    }

    fn random_graph(rng: &mut ChaCha8Rng, l: usize) -> Adjacency {
        let pts: Vec<Vec3> = (0..l)
            .map(|_| Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.0))
            .collect();
        Adjacency::from_positions(&pts, 0.6)
    }

    fn random_features(rng: &mut ChaCha8Rng, l: usize, d: usize) -> Tensor {
        Tensor::from_vec(&[l, d], (0..l * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn isolated_nodes_use_self_weight_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = random_layer(&mut rng, 3, 4, Activation::Elu);
        let x = random_features(&mut rng, 3, 3);
        let adj = Adjacency::empty(3);
        let y = sage_forward(&layer, &x, &adj).unwrap();
        for i in 0..3 {
            let xi = &x.data()[i * 3..i * 3 + 3];
            for o in 0..4 {
                let mut s = layer.bias.data()[o];
                for (k, v) in xi.iter().enumerate() {
                    s += layer.w_self.at(o, k) * v;
                }
                assert!((y.at(i, o) - crate::nn::elu(s)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn complete_graph_with_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = random_layer(&mut rng, 3, 4, Activation::Tanh);
        let row = [0.2, -0.7, 0.4];
        let x = Tensor::from_rows(&vec![row.to_vec(); 4]).unwrap();
        let pts = vec![Vec3::ZERO; 4];
        let adj = Adjacency::from_positions(&pts, 1.0);
        let agg = mean_aggregate(&x, &adj).unwrap();
        for (a, b) in agg.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let y = sage_forward(&layer, &x, &adj).unwrap();
        for i in 1..4 {
            assert_eq!(y.to_rows()[i], y.to_rows()[0]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..10 {
            let act = [Activation::Elu, Activation::Tanh][trial % 2];
            let l = 2 + trial % 4;
            let layer = random_layer(&mut rng, 3, 4, act);
            let adj = random_graph(&mut rng, l);
            let x = random_features(&mut rng, l, 3);
            let up = random_features(&mut rng, l, 4);
            let objective = |lay: &SageLayer, x: &Tensor| -> f64 {
                let y = sage_forward(lay, x, &adj).unwrap();
                y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            };
            let (gx, gp) = sage_backward(&layer, &x, &adj, &up).unwrap();
            let report = grad_check(&layer.flatten(), &gp.flatten(), 1e-6, |p| {
                let mut lay = layer.clone();
                lay.assign(p).unwrap();
                objective(&lay, &x)
            });
            assert!(report.max_rel_error < 1e-4, "params: {report:?}");
            let report = grad_check(x.data(), gx.data(), 1e-6, |xp| {
                objective(&layer, &Tensor::from_vec(&[l, 3], xp.to_vec()).unwrap())
            });
            assert!(report.max_rel_error < 1e-4, "inputs: {report:?}");
        }
    }

    #[test]
    fn shape_errors() {
        let layer = SageLayer::zeros(3, 4, Activation::Elu);
        let x = Tensor::zeros(&[2, 2]);
        assert!(sage_forward(&layer, &x, &Adjacency::empty(2)).is_err());
        let x = Tensor::zeros(&[2, 3]);
        assert!(sage_forward(&layer, &x, &Adjacency::empty(3)).is_err());
    }
}
