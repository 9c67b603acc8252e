//! A deliberately small neural-network kernel: dense and GraphSAGE layers
//! with hand-derived reverse-mode gradients, MSE, Adam and a finite
//! difference gradient checker. Everything is `f64`.
//!
//! Gradients are stored in containers of the same type as the parameters
//! (see [`Parameters::zeros_like`]), so a layer's gradient is itself a layer.

mod activation;
mod adam;
mod dense;
mod gradcheck;
mod loss;
mod sage;
mod tensor;

pub use activation::{elu, elu_derivative, Activation};
pub use adam::{AdamConfig, AdamState};
pub use dense::{dense_backward, dense_forward, DenseLayer, Mlp, MlpTrace};
pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_FD_STEP};
pub use loss::{mse, mse_grad, mse_with_grad};
pub use sage::{mean_aggregate, sage_backward, sage_forward, SageLayer, SageTrace};
pub use tensor::Tensor;
pub(crate) use loss::mse_acc_grad;

use rand::Rng;

use crate::error::{Error, Result};

/// Uniform Glorot initialisation bound for a layer of the given fan sizes.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn glorot_fill<R: Rng + ?Sized>(t: &mut Tensor, fan_in: usize, fan_out: usize, rng: &mut R) {
    let a = glorot_bound(fan_in, fan_out);
    for v in t.data_mut() {
        *v = rng.random_range(-a..=a);
    }
}

/// Anything that owns trainable arrays.
///
/// `visit` and `visit_mut` must walk the arrays in the same, stable order;
/// flattening and optimiser state depend on it.
pub trait Parameters: Clone {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |p| out.extend_from_slice(p));
        out
    }

    fn assign(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::shape(format!("{n} parameters"), flat.len()));
        }
        let mut offset = 0;
        self.visit_mut(&mut |p| {
            let n = p.len();
            p.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |p| p.fill(value));
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    /// Element-wise `self += other`.
    fn accumulate(&mut self, other: &Self) {
        let src = other.flatten();
        let mut offset = 0;
        self.visit_mut(&mut |p| {
            let n = p.len();
            for (d, s) in p.iter_mut().zip(&src[offset..offset + n]) {
                *d += s;
            }
            offset += n;
        });
    }

    fn scale(&mut self, s: f64) {
        self.visit_mut(&mut |p| p.iter_mut().for_each(|v| *v *= s));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |p| ok &= p.iter().all(|v| v.is_finite()));
        ok
    }
}
