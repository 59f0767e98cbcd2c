use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step decay: the learning rate is multiplied by `decay_factor` at the
/// start of every `decay_every`-th epoch (epochs are 0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub decay_factor: f64,
    pub decay_every: usize,
    pub total_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            decay_factor: 0.1,
            decay_every: 15,
            total_epochs: 45,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.decay_every == 0 {
            return Err(Error::config("decay_every must be at least 1"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(Error::config(format!("decay factor {} must be positive", self.decay_factor)));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch`. The decay is applied by
    /// repeated multiplication so that consecutive plateaus differ by exactly
    /// one multiplication by `decay_factor`.
    pub fn lr_at(&self, base_lr: f64, epoch: usize) -> f64 {
        let mut lr = base_lr;
        for _ in 0..epoch / self.decay_every.max(1) {
            lr *= self.decay_factor;
        }
        lr
    }
}
