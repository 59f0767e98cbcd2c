use serde::{Deserialize, Serialize};

use super::{Mlp, MlpCache, MlpConfig};
use crate::error::Result;
use crate::numerics::{relu, Matrix, Rng};
use crate::params::{join, Parameterized};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    /// Extra hidden widths on each side; empty means single linear layers.
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    /// ReLU on the latent code.
    #[serde(default = "default_true")]
    pub latent_relu: bool,
}

fn default_true() -> bool {
    true
}

/// Object-feature autoencoder: `z = encoder(x)`, `x_hat = decoder(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_relu: bool,
}

#[derive(Debug, Clone)]
pub struct EncodeCache {
    mlp: MlpCache,
    pre: Vec<f64>,
}

impl Autoencoder {
    pub fn new(config: &AutoencoderConfig, rng: &mut Rng) -> Result<Self> {
        let mut enc_dims = vec![config.input_dim];
        enc_dims.extend(&config.hidden_dims);
        enc_dims.push(config.latent_dim);
        let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
        let encoder = Mlp::new(
            &MlpConfig {
                layer_dims: enc_dims,
                dropout_rate: 0.0,
            },
            rng,
        )?;
        let decoder = Mlp::new(
            &MlpConfig {
                layer_dims: dec_dims,
                dropout_rate: 0.0,
            },
            rng,
        )?;
        Ok(Self {
            encoder,
            decoder,
            latent_relu: config.latent_relu,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, EncodeCache)> {
        let (pre, mlp) = self.encoder.forward(x, None)?;
        let z = if self.latent_relu {
            pre.iter().map(|&v| relu(v)).collect()
        } else {
            pre.clone()
        };
        Ok((z, EncodeCache { mlp, pre }))
    }

    pub fn decode(&self, z: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        self.decoder.forward(z, None)
    }

    pub fn encode_backward(
        &self,
        cache: &EncodeCache,
        grad_z: &[f64],
        grads: &mut Autoencoder,
    ) -> Result<Vec<f64>> {
        let g: Vec<f64> = if self.latent_relu {
            grad_z
                .iter()
                .zip(&cache.pre)
                .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
                .collect()
        } else {
            grad_z.to_vec()
        };
        self.encoder.backward(&cache.mlp, &g, &mut grads.encoder)
    }

    pub fn decode_backward(
        &self,
        cache: &MlpCache,
        grad_x_hat: &[f64],
        grads: &mut Autoencoder,
    ) -> Result<Vec<f64>> {
        self.decoder.backward(cache, grad_x_hat, &mut grads.decoder)
    }
}

impl Parameterized for Autoencoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}
