//! Dense layers with hand-written backward passes. The whole model is small
//! enough that explicit gradients stay readable, and they are what the
//! finite-difference suites verify.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrix::FeatureMatrix;
use crate::rng::SplitMix64;

/// Affine map `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: FeatureMatrix,
    pub b: Vec<f64>,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut w = FeatureMatrix::zeros(in_dim, out_dim);
        for v in w.data_mut() {
            *v = rng.range_f64(-bound, bound);
        }
        Linear {
            w,
            b: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: FeatureMatrix::zeros(in_dim, out_dim),
            b: vec![0.0; out_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear::zeros(self.in_dim(), self.out_dim())
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut out = x.matmul(&self.w)?;
        for i in 0..out.rows() {
            for (v, &b) in out.row_mut(i).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Returns `grad_x` and accumulates `dW = x^T grad_out`, `db = column
    /// sums of grad_out` into `grads`.
    pub fn backward(
        &self,
        x: &FeatureMatrix,
        grad_out: &FeatureMatrix,
        grads: &mut Linear,
    ) -> Result<FeatureMatrix> {
        grads.w.add_assign(&x.transposed_matmul(grad_out)?)?;
        for i in 0..grad_out.rows() {
            for (gb, &g) in grads.b.iter_mut().zip(grad_out.row(i)) {
                *gb += g;
            }
        }
        grad_out.matmul_transposed(&self.w)
    }
}

/// Two affine layers with a tanh between them; the second layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: FeatureMatrix,
    pub hidden: FeatureMatrix, // tanh(x W1 + b1)
}

impl Mlp {
    pub fn init(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        Mlp {
            l1: Linear::init(in_dim, hidden, rng),
            l2: Linear::init(hidden, out_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            l1: self.l1.zeros_like(),
            l2: self.l2.zeros_like(),
        }
    }

    pub fn forward(&self, x: &FeatureMatrix) -> Result<(FeatureMatrix, MlpCache)> {
        let hidden = self.l1.forward(x)?.map(f64::tanh);
        let out = self.l2.forward(&hidden)?;
        Ok((
            out,
            MlpCache {
                input: x.clone(),
                hidden,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: &FeatureMatrix,
        grads: &mut Mlp,
    ) -> Result<FeatureMatrix> {
        let grad_hidden = self.l2.backward(&cache.hidden, grad_out, &mut grads.l2)?;
        // d tanh(z) = 1 - tanh(z)^2
        let mut grad_pre = grad_hidden;
        for (g, &h) in grad_pre.data_mut().iter_mut().zip(cache.hidden.data()) {
            *g *= 1.0 - h * h;
        }
        self.l1.backward(&cache.input, &grad_pre, &mut grads.l1)
    }
}
