use crate::error::{Error, Result};
use crate::numerics::Rng;

pub fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout. Returns the output and the per-entry multiplier mask
/// (`0` for dropped entries, `1 / (1 - rate)` for survivors).
///
/// `rng == None` is evaluation mode: identity with an all-ones mask. A zero
/// rate never touches the generator.
pub fn dropout(x: &[f64], rate: f64, rng: Option<&mut Rng>) -> Result<(Vec<f64>, Vec<f64>)> {
    check_rate(rate)?;
    let rng = match rng {
        Some(rng) if rate > 0.0 => rng,
        _ => return Ok((x.to_vec(), vec![1.0; x.len()])),
    };
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = x
        .iter()
        .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
        .collect();
    let y = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((y, mask))
}
