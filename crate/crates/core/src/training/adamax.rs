//! Adamax (infinity-norm Adam) with coupled weight decay.
//!
//! Per scalar, with `g` already including `weight_decay * theta`:
//!
//! ```text
//! m = beta1 * m + (1 - beta1) * g
//! u = max(beta2 * u, |g|)
//! theta -= lr / (1 - beta1^t) * m / (u + eps)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::params::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamaxConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamaxState {
    pub config: AdamaxConfig,
    /// Learning rate used by the next step; the schedule rewrites it.
    pub lr: f64,
    pub t: u64,
    pub m: Vec<Matrix>,
    pub u: Vec<Matrix>,
}

impl AdamaxState {
    pub fn new<P: Parameterized>(config: AdamaxConfig, params: &P) -> Self {
        let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|(_, m)| m.shape()).collect();
        Self {
            config,
            lr: config.lr,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            u: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step<P: Parameterized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        let mut theta: Vec<&mut Matrix> = params.iter_mut().map(|(_, m)| &mut **m).collect();
        let g: Vec<&Matrix> = grads.iter().map(|(_, m)| *m).collect();
        if let Some((path, _)) = grads.iter().find(|(_, m)| !m.is_finite()) {
            return Err(Error::numeric(format!("non-finite gradient in `{path}`")));
        }
        self.step_tensors(&mut theta, &g)
    }

    /// Update aligned tensor lists. Fails before touching anything if a
    /// gradient is non-finite or shapes disagree.
    pub fn step_tensors(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[k].shape() {
                return Err(Error::shape(format!("optimizer tensor {k} shape mismatch")));
            }
            if !g.is_finite() {
                return Err(Error::numeric(format!("non-finite gradient in tensor {k}")));
            }
        }
        self.t += 1;
        let AdamaxConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let step = self.lr / (1.0 - beta1.powi(self.t as i32));
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[k].as_mut_slice();
            let u = self.u[k].as_mut_slice();
            for (((theta, &g), m), u) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.iter_mut())
                .zip(u.iter_mut())
            {
                let g = g + weight_decay * *theta;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *u = (beta2 * *u).max(g.abs());
                *theta -= step * *m / (*u + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay() -> AdamaxConfig {
        AdamaxConfig {
            weight_decay: 0.0,
            ..AdamaxConfig::default()
        }
    }

    fn run_one(theta: f64, g: f64, cfg: AdamaxConfig) -> (f64, AdamaxState) {
        let mut p = Matrix::column(vec![theta]);
        let gm = Matrix::column(vec![g]);
        let mut st = AdamaxState {
            config: cfg,
            lr: cfg.lr,
            t: 0,
            m: vec![Matrix::zeros(1, 1)],
            u: vec![Matrix::zeros(1, 1)],
        };
        st.step_tensors(&mut [&mut p], &[&gm]).unwrap();
        (p.get(0, 0), st)
    }

    #[test]
    fn first_step_hand_value() {
        let (theta, st) = run_one(1.0, 1.0, no_decay());
        let expected = 1.0 - (0.001 / (1.0 - 0.9)) * (0.1 / (1.0 + 1e-8));
        assert_eq!(theta, expected);
        assert!((theta - 0.999).abs() < 1e-9);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_is_no_op() {
        let (theta, _) = run_one(0.37, 0.0, no_decay());
        assert_eq!(theta, 0.37);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut p = Matrix::column(vec![1.0]);
        let mut st = AdamaxState {
            config: no_decay(),
            lr: 1e-3,
            t: 0,
            m: vec![Matrix::zeros(1, 1)],
            u: vec![Matrix::zeros(1, 1)],
        };
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = Matrix::column(vec![2.0 * p.get(0, 0)]);
            st.step_tensors(&mut [&mut p], &[&g]).unwrap();
            assert!(p.get(0, 0).abs() < prev.abs());
            prev = p.get(0, 0);
        }
    }

    #[test]
    fn infinity_norm_never_decreases_below_discount() {
        let mut p = Matrix::column(vec![0.5, -0.5]);
        let mut st = AdamaxState {
            config: AdamaxConfig::default(),
            lr: 1e-3,
            t: 0,
            m: vec![Matrix::zeros(2, 1)],
            u: vec![Matrix::zeros(2, 1)],
        };
        let mut prev_u = vec![0.0, 0.0];
        for g in [[3.0, -1.0], [0.1, 0.2], [-5.0, 0.0]] {
            let gm = Matrix::column(g.to_vec());
            st.step_tensors(&mut [&mut p], &[&gm]).unwrap();
            for k in 0..2 {
                let u = st.u[0].as_slice()[k];
                assert!(u >= 0.0);
                assert!(u >= 0.999 * prev_u[k]);
            }
            prev_u = st.u[0].as_slice().to_vec();
        }
    }

    #[test]
    fn doubling_lr_doubles_delta() {
        let cfg = no_decay();
        let (a, _) = run_one(0.8, -0.3, cfg);
        let (b, _) = run_one(0.8, -0.3, AdamaxConfig { lr: 2.0 * cfg.lr, ..cfg });
        assert_eq!(b - 0.8, 2.0 * (a - 0.8));
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = Matrix::column(vec![1.0, 2.0]);
        let g = Matrix::column(vec![0.5, f64::NAN]);
        let mut st = AdamaxState {
            config: no_decay(),
            lr: 1e-3,
            t: 0,
            m: vec![Matrix::zeros(2, 1)],
            u: vec![Matrix::zeros(2, 1)],
        };
        let err = st.step_tensors(&mut [&mut p], &[&g]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(p.as_slice(), &[1.0, 2.0]);
        assert_eq!(st.t, 0);
    }
}
