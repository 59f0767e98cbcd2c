use serde::{Deserialize, Serialize};

use super::{check_rate, dropout, Linear};
use crate::error::{Error, Result};
use crate::numerics::{relu, Rng};
use crate::params::{join, Parameterized};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input dimension followed by every layer's output dimension.
    pub layer_dims: Vec<usize>,
    pub dropout_rate: f64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::config("an MLP needs at least an input and an output dim"));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::config(format!("zero MLP dim in {:?}", self.layer_dims)));
        }
        check_rate(self.dropout_rate)
    }
}

/// Stack of linear layers with ReLU (and inverted dropout in training)
/// between them; the final layer is left linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input seen by each layer (post-dropout for hidden layers).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every hidden layer.
    hidden_pre: Vec<Vec<f64>>,
    /// Dropout multipliers applied after every hidden activation.
    masks: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(config: &MlpConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_dims
            .windows(2)
            .map(|w| Linear::glorot(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            dropout_rate: config.dropout_rate,
        })
    }

    pub fn from_layers(layers: Vec<Linear>, dropout_rate: f64) -> Result<Self> {
        check_rate(dropout_rate)?;
        if layers.is_empty() {
            return Err(Error::config("an MLP needs at least one layer"));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    w[0].out_dim(),
                    i + 1,
                    w[1].in_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, x: &[f64], mut rng: Option<&mut Rng>) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.in_dim() {
            return Err(Error::shape(format!(
                "MLP expects input dim {}, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        let n = self.layers.len();
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(n),
            hidden_pre: Vec::with_capacity(n - 1),
            masks: Vec::with_capacity(n - 1),
        };
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&h);
            cache.inputs.push(h);
            if k + 1 == n {
                return Ok((pre, cache));
            }
            let act: Vec<f64> = pre.iter().map(|&v| relu(v)).collect();
            let (dropped, mask) = dropout(&act, self.dropout_rate, rng.as_deref_mut())?;
            cache.hidden_pre.push(pre);
            cache.masks.push(mask);
            h = dropped;
        }
        unreachable!("loop returns at the final layer")
    }

    pub fn backward(&self, cache: &MlpCache, grad_y: &[f64], grads: &mut Mlp) -> Result<Vec<f64>> {
        let n = self.layers.len();
        if cache.inputs.len() != n || cache.hidden_pre.len() + 1 != n {
            return Err(Error::usage(format!(
                "MLP cache holds {} layers, network has {n}",
                cache.inputs.len()
            )));
        }
        if grad_y.len() != self.out_dim() {
            return Err(Error::shape(format!(
                "MLP output gradient has dim {}, expected {}",
                grad_y.len(),
                self.out_dim()
            )));
        }
        let mut g = grad_y.to_vec();
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            if cache.inputs[k].len() != layer.in_dim() {
                return Err(Error::usage("MLP cache does not match this network"));
            }
            let gx = layer.backward(&cache.inputs[k], &g, &mut grads.layers[k]);
            if k == 0 {
                return Ok(gx);
            }
            let pre = &cache.hidden_pre[k - 1];
            let mask = &cache.masks[k - 1];
            g = gx
                .iter()
                .zip(pre)
                .zip(mask)
                .map(|((g, &p), &m)| if p > 0.0 { g * m } else { 0.0 })
                .collect();
        }
        unreachable!("loop returns at the first layer")
    }
}

impl Parameterized for Mlp {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a crate::numerics::Matrix)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
    }

    fn visit_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &'a mut crate::numerics::Matrix),
    ) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
    }
}
