//! Central-difference gradient checking.

use rand::seq::index::sample;

use crate::rng::seeded;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates to probe; every coordinate is checked when the parameter count is at most this.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares the analytic gradient returned by `loss_fn` at `params` against
/// central differences on a sample of coordinates.
///
/// `loss_fn` must be deterministic and return `(loss, gradient)`. The error per
/// coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], cfg: GradCheckConfig) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match params");

    let coords: Vec<usize> = if params.len() <= cfg.max_coords {
        (0..params.len()).collect()
    } else {
        let mut idx = sample(&mut seeded(cfg.seed), params.len(), cfg.max_coords).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: coords.len(),
    };
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + cfg.eps;
        let plus = loss_fn(&probe).0;
        probe[i] = orig - cfg.eps;
        let minus = loss_fn(&probe).0;
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    report
}
