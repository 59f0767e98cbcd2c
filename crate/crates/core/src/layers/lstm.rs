//! LSTM cell and bidirectional wrapper with full backpropagation through time.
//!
//! Gate pre-activations are stacked in the order `[input, forget, output,
//! candidate]`, each block `hidden_size` rows tall.

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix, Rng};
use crate::params::{join, Parameterized};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `4H x input_dim`
    pub w_input: Matrix,
    /// `4H x H`
    pub w_hidden: Matrix,
    /// `4H x 1`
    pub bias: Matrix,
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    /// Glorot-uniform matrices, zero biases except the forget gate at 1.0.
    pub fn new(input_dim: usize, hidden_size: usize, rng: &mut Rng) -> Self {
        let h = hidden_size;
        let w_input = rng.glorot_matrix(4 * h, input_dim);
        let w_hidden = rng.glorot_matrix(4 * h, h);
        let mut bias = Matrix::zeros(4 * h, 1);
        for k in h..2 * h {
            bias.set(k, 0, 1.0);
        }
        Self {
            w_input,
            w_hidden,
            bias,
        }
    }

    pub fn zeros(input_dim: usize, hidden_size: usize) -> Self {
        Self {
            w_input: Matrix::zeros(4 * hidden_size, input_dim),
            w_hidden: Matrix::zeros(4 * hidden_size, hidden_size),
            bias: Matrix::zeros(4 * hidden_size, 1),
        }
    }

    #[inline]
    pub fn hidden_size(&self) -> usize {
        self.w_hidden.cols()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.w_input.cols()
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
        let hs = self.hidden_size();
        if x.len() != self.input_dim() || h_prev.len() != hs || c_prev.len() != hs {
            return Err(Error::shape(format!(
                "LSTM step expects x {}, h {hs}, c {hs}; got {}, {}, {}",
                self.input_dim(),
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let mut a = self.w_input.mat_vec(x);
        for (v, (w, b)) in a
            .iter_mut()
            .zip(self.w_hidden.mat_vec(h_prev).iter().zip(self.bias.as_slice()))
        {
            *v += w + b;
        }
        let i: Vec<f64> = a[..hs].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = a[hs..2 * hs].iter().map(|&v| sigmoid(v)).collect();
        let o: Vec<f64> = a[2 * hs..3 * hs].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = a[3 * hs..].iter().map(|v| v.tanh()).collect();
        let c: Vec<f64> = (0..hs).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hs).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            o,
            g,
            tanh_c,
        };
        Ok((h, c, cache))
    }

    /// Given `dL/dh_t` and `dL/dc_t` (from later steps), accumulates parameter
    /// gradients and returns `(dL/dx_t, dL/dh_{t-1}, dL/dc_{t-1})`.
    pub fn step_backward(
        &self,
        cache: &LstmStepCache,
        grad_h: &[f64],
        grad_c: &[f64],
        grads: &mut LstmCell,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hs = self.hidden_size();
        let mut da = vec![0.0; 4 * hs];
        let mut dc_prev = vec![0.0; hs];
        for k in 0..hs {
            let (i, f, o, g, tc) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k], cache.tanh_c[k]);
            let dc = grad_c[k] + grad_h[k] * o * (1.0 - tc * tc);
            let d_o = grad_h[k] * tc;
            let d_i = dc * g;
            let d_g = dc * i;
            let d_f = dc * cache.c_prev[k];
            dc_prev[k] = dc * f;
            da[k] = d_i * i * (1.0 - i);
            da[hs + k] = d_f * f * (1.0 - f);
            da[2 * hs + k] = d_o * o * (1.0 - o);
            da[3 * hs + k] = d_g * (1.0 - g * g);
        }
        grads.w_input.add_outer(&da, &cache.x);
        grads.w_hidden.add_outer(&da, &cache.h_prev);
        grads.bias.add_slice(&da);
        let dx = self.w_input.t_mat_vec(&da);
        let dh_prev = self.w_hidden.t_mat_vec(&da);
        (dx, dh_prev, dc_prev)
    }

    /// Runs the cell over `xs` from zero state, returning every hidden state.
    fn run(&self, xs: &[&[f64]]) -> Result<(Vec<Vec<f64>>, Vec<LstmStepCache>)> {
        let hs = self.hidden_size();
        let mut h = vec![0.0; hs];
        let mut c = vec![0.0; hs];
        let mut outs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (h_next, c_next, cache) = self.step(x, &h, &c)?;
            outs.push(h_next.clone());
            caches.push(cache);
            h = h_next;
            c = c_next;
        }
        Ok((outs, caches))
    }

    /// BPTT over a run; `grad_hs[t]` is the loss gradient w.r.t. output `t`.
    fn run_backward(
        &self,
        caches: &[LstmStepCache],
        grad_hs: &[Vec<f64>],
        grads: &mut LstmCell,
    ) -> Vec<Vec<f64>> {
        let hs = self.hidden_size();
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        let mut dxs = vec![Vec::new(); caches.len()];
        for t in (0..caches.len()).rev() {
            let dh: Vec<f64> = grad_hs[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (dx, dh_prev, dc_prev) = self.step_backward(&caches[t], &dh, &dc_next, grads);
            dxs[t] = dx;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        dxs
    }
}

impl Parameterized for LstmCell {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        f(join(prefix, "w_input"), &self.w_input);
        f(join(prefix, "w_hidden"), &self.w_hidden);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        f(join(prefix, "w_input"), &mut self.w_input);
        f(join(prefix, "w_hidden"), &mut self.w_hidden);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Bidirectional LSTM; step `j` emits `[h_fwd[j]; h_bwd[j]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Blstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BlstmCache {
    fwd: Vec<LstmStepCache>,
    /// In processing order, i.e. `bwd[0]` saw the last input.
    bwd: Vec<LstmStepCache>,
}

impl Blstm {
    pub fn new(input_dim: usize, hidden_size: usize, rng: &mut Rng) -> Self {
        let forward = LstmCell::new(input_dim, hidden_size, rng);
        let backward = LstmCell::new(input_dim, hidden_size, rng);
        Self { forward, backward }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_size()
    }

    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, BlstmCache)> {
        if xs.is_empty() {
            return Err(Error::usage("BLSTM over an empty sequence"));
        }
        let fwd_in: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let bwd_in: Vec<&[f64]> = xs.iter().rev().map(Vec::as_slice).collect();
        let (hf, fwd) = self.forward.run(&fwd_in)?;
        let (hb, bwd) = self.backward.run(&bwd_in)?;
        let m = xs.len();
        let zs = (0..m)
            .map(|j| {
                let mut z = hf[j].clone();
                z.extend_from_slice(&hb[m - 1 - j]);
                z
            })
            .collect();
        Ok((zs, BlstmCache { fwd, bwd }))
    }

    pub fn backward(
        &self,
        cache: &BlstmCache,
        grad_zs: &[Vec<f64>],
        grads: &mut Blstm,
    ) -> Result<Vec<Vec<f64>>> {
        let m = cache.fwd.len();
        let hs = self.hidden_size();
        if grad_zs.len() != m || cache.bwd.len() != m {
            return Err(Error::usage(format!(
                "BLSTM cache covers {m} steps, got {} output gradients",
                grad_zs.len()
            )));
        }
        if let Some(bad) = grad_zs.iter().position(|g| g.len() != 2 * hs) {
            return Err(Error::shape(format!(
                "BLSTM output gradient {bad} has dim {}, expected {}",
                grad_zs[bad].len(),
                2 * hs
            )));
        }
        let g_fwd: Vec<Vec<f64>> = grad_zs.iter().map(|g| g[..hs].to_vec()).collect();
        let g_bwd: Vec<Vec<f64>> = grad_zs.iter().rev().map(|g| g[hs..].to_vec()).collect();
        let mut dx = self.forward.run_backward(&cache.fwd, &g_fwd, &mut grads.forward);
        let dx_b = self.backward.run_backward(&cache.bwd, &g_bwd, &mut grads.backward);
        for (j, d) in dx.iter_mut().enumerate() {
            for (a, b) in d.iter_mut().zip(&dx_b[m - 1 - j]) {
                *a += b;
            }
        }
        Ok(dx)
    }
}

impl Parameterized for Blstm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        self.forward.visit(&join(prefix, "forward"), f);
        self.backward.visit(&join(prefix, "backward"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        self.forward.visit_mut(&join(prefix, "forward"), f);
        self.backward.visit_mut(&join(prefix, "backward"), f);
    }
}
