//! Sensor faults and signal-relative noise.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::Readings;
use crate::rng::Rng;

/// Number of faulty cells for a fraction of `cells`, rounded down.
pub fn fault_count(fraction: f64, cells: usize) -> usize {
    // The epsilon absorbs representation error such as 0.7 * 10 = 6.999...
    ((fraction * cells as f64 + 1e-9).floor() as usize).min(cells)
}

/// Zeroes `floor(fraction * cells)` distinct, uniformly chosen cells.
/// Returns the corrupted readings and the fault mask (true = faulty).
pub fn inject_faults(readings: &Readings, fraction: f64, rng: &mut Rng) -> Result<(Readings, Vec<bool>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("fault fraction must be in [0, 1], got {fraction}")));
    }
    let n = readings.len();
    let k = fault_count(fraction, n);
    let mut out = readings.clone();
    let mut mask = vec![false; n];
    for i in sample(rng, n, k) {
        mask[i] = true;
        out.values_mut()[i] = 0.0;
    }
    Ok((out, mask))
}

/// Adds `Normal(0, (alpha * |reading|)^2)` to every cell. One standard normal
/// is drawn per cell regardless of its value, so the stream layout depends
/// only on the grid size.
pub fn inject_noise(readings: &Readings, alpha: f64, rng: &mut Rng) -> Result<Readings> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("noise level must be in [0, 1], got {alpha}")));
    }
    let mut out = readings.clone();
    for v in out.values_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += alpha * v.abs() * z;
    }
    Ok(out)
}
