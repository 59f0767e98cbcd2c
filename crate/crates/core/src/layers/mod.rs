//! Trainable layer primitives with analytic backward passes.
//!
//! Forward calls return a cache value; backward consumes it and accumulates
//! parameter gradients into a gradient buffer of the layer's own type (see
//! [`crate::params::Parameterized::zeros_like`]). Passing `Some(rng)` as the
//! dropout source selects training mode; `None` is evaluation mode.

mod autoencoder;
mod dropout;
mod linear;
mod lstm;
mod mlp;

pub use autoencoder::{Autoencoder, AutoencoderConfig, EncodeCache};
pub use dropout::{check_rate, dropout};
pub use linear::Linear;
pub use lstm::{Blstm, BlstmCache, LstmCell, LstmStepCache};
pub use mlp::{Mlp, MlpCache, MlpConfig};
