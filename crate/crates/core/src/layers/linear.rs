use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::params::{join, Parameterized};

/// Affine map `y = W x + b` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(format!(
                "bias of length {} for weight {}x{}",
                bias.len(),
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(Self {
            weight,
            bias: Matrix::column(bias),
        })
    }

    /// Glorot-uniform weight, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Self {
            weight: rng.glorot_matrix(out_dim, in_dim),
            bias: Matrix::zeros(out_dim, 1),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Matrix::zeros(out_dim, 1),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Matrix::identity(dim),
            bias: Matrix::zeros(dim, 1),
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.mat_vec(x);
        for (v, b) in y.iter_mut().zip(self.bias.as_slice()) {
            *v += b;
        }
        y
    }

    /// Accumulates `dW += g x^T`, `db += g` and returns `W^T g`.
    pub fn backward(&self, x: &[f64], grad_y: &[f64], grads: &mut Linear) -> Vec<f64> {
        grads.weight.add_outer(grad_y, x);
        grads.bias.add_slice(grad_y);
        self.weight.t_mat_vec(grad_y)
    }
}

impl Parameterized for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}
