//! Hierarchical multimodal attention: kernel-scored softmax pooling within a
//! modality, then three unconstrained scalars weighting the visual, object
//! and word vectors before concatenation.

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, softmax, Matrix, Rng};
use crate::params::{join, Parameterized};

/// Modality order used for concatenation and for indexing the inter weights.
pub const MODALITIES: [&str; 3] = ["visual", "object", "word"];

#[derive(Debug, Clone, PartialEq)]
pub struct IntraAttention {
    /// Kernel, `d x 1`.
    pub kernel: Matrix,
}

#[derive(Debug, Clone)]
pub struct IntraCache {
    zs: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl IntraCache {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl IntraAttention {
    /// Kernel entries drawn from `N(0, 1/sqrt(d))`.
    pub fn new(dim: usize, rng: &mut Rng) -> Self {
        Self {
            kernel: rng.normal_matrix(dim, 1, 0.0, 1.0 / (dim as f64).sqrt()),
        }
    }

    pub fn from_kernel(q: Vec<f64>) -> Self {
        Self {
            kernel: Matrix::column(q),
        }
    }

    pub fn dim(&self) -> usize {
        self.kernel.rows()
    }

    /// Returns the pooled vector, the attention weights and the cache.
    pub fn attend(&self, zs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>, IntraCache)> {
        if zs.is_empty() {
            return Err(Error::usage("intra-modality attention over an empty set"));
        }
        let q = self.kernel.as_slice();
        if let Some(bad) = zs.iter().position(|z| z.len() != q.len()) {
            return Err(Error::shape(format!(
                "attention input {bad} has dim {}, kernel has {}",
                zs[bad].len(),
                q.len()
            )));
        }
        let scores: Vec<f64> = zs.iter().map(|z| dot(q, z)).collect();
        let weights = softmax(&scores)?;
        let mut m = vec![0.0; q.len()];
        for (w, z) in weights.iter().zip(zs) {
            axpy(&mut m, *w, z);
        }
        let cache = IntraCache {
            zs: zs.to_vec(),
            weights: weights.clone(),
        };
        Ok((m, weights, cache))
    }

    /// Accumulates the kernel gradient into `grads` and returns `dL/dz_j`.
    pub fn backward(
        &self,
        cache: &IntraCache,
        grad_m: &[f64],
        grads: &mut IntraAttention,
    ) -> Vec<Vec<f64>> {
        let q = self.kernel.as_slice();
        let w = &cache.weights;
        // dL/dw_j = <grad_m, z_j>; softmax Jacobian gives dL/dp_j
        let dw: Vec<f64> = cache.zs.iter().map(|z| dot(grad_m, z)).collect();
        let mean: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        let dp: Vec<f64> = w.iter().zip(&dw).map(|(wj, dj)| wj * (dj - mean)).collect();
        let gq = grads.kernel.as_mut_slice();
        let mut grad_zs = Vec::with_capacity(cache.zs.len());
        for ((z, &wj), &dpj) in cache.zs.iter().zip(w).zip(&dp) {
            axpy(gq, dpj, z);
            let mut gz: Vec<f64> = grad_m.iter().map(|g| wj * g).collect();
            axpy(&mut gz, dpj, q);
            grad_zs.push(gz);
        }
        grad_zs
    }
}

impl Parameterized for IntraAttention {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        f(join(prefix, "kernel"), &self.kernel);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        f(join(prefix, "kernel"), &mut self.kernel);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterAttention {
    /// One unconstrained scalar per modality, `3 x 1`.
    pub scores: Matrix,
}

#[derive(Debug, Clone)]
pub struct InterCache {
    parts: [Vec<f64>; 3],
}

impl Default for InterAttention {
    fn default() -> Self {
        Self::new([1.0, 1.0, 1.0])
    }
}

impl InterAttention {
    pub fn new(scores: [f64; 3]) -> Self {
        Self {
            scores: Matrix::column(scores.to_vec()),
        }
    }

    /// `r = [a1 * zv; a2 * mo; a3 * mw]`
    pub fn combine(&self, zv: &[f64], mo: &[f64], mw: &[f64]) -> Result<(Vec<f64>, InterCache)> {
        let d = zv.len();
        if mo.len() != d || mw.len() != d {
            return Err(Error::shape(format!(
                "modality dims differ: visual {d}, object {}, word {}",
                mo.len(),
                mw.len()
            )));
        }
        let a = self.scores.as_slice();
        let mut r = Vec::with_capacity(3 * d);
        for (k, part) in [zv, mo, mw].iter().enumerate() {
            r.extend(part.iter().map(|v| a[k] * v));
        }
        let cache = InterCache {
            parts: [zv.to_vec(), mo.to_vec(), mw.to_vec()],
        };
        Ok((r, cache))
    }

    /// Accumulates `dL/da` and returns the gradients of the three inputs.
    pub fn backward(
        &self,
        cache: &InterCache,
        grad_r: &[f64],
        grads: &mut InterAttention,
    ) -> Result<[Vec<f64>; 3]> {
        let d = cache.parts[0].len();
        if grad_r.len() != 3 * d {
            return Err(Error::shape(format!(
                "inter-attention gradient has dim {}, expected {}",
                grad_r.len(),
                3 * d
            )));
        }
        let a = self.scores.as_slice();
        let ga = grads.scores.as_mut_slice();
        let mut out: [Vec<f64>; 3] = Default::default();
        for k in 0..3 {
            let seg = &grad_r[k * d..(k + 1) * d];
            ga[k] += dot(seg, &cache.parts[k]);
            out[k] = seg.iter().map(|g| a[k] * g).collect();
        }
        Ok(out)
    }
}

impl Parameterized for InterAttention {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        f(join(prefix, "scores"), &self.scores);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        f(join(prefix, "scores"), &mut self.scores);
    }
}
