//! Adam with bias correction over named parameter blocks.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A mutable view of one parameter tensor, named for diagnostics.
pub struct ParamBlock<'a> {
    pub name: &'static str,
    pub values: &'a mut [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed accumulators for blocks of the given lengths.
    pub fn new(config: AdamConfig, block_lens: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first_moment: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }
}

/// Applies one Adam update in place. Gradients are validated before any
/// parameter is touched, so an error leaves `params` and `state` unchanged.
pub fn adam_step(state: &mut AdamState, params: &mut [ParamBlock<'_>], grads: &[&[f64]]) -> Result<()> {
    if params.len() != state.first_moment.len() || grads.len() != params.len() {
        return Err(shape_err(
            "adam_step block count",
            state.first_moment.len(),
            (params.len(), grads.len()),
        ));
    }
    for ((block, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if block.values.len() != m.len() || g.len() != m.len() {
            return Err(shape_err(
                "adam_step block length",
                (block.name, m.len()),
                (block.values.len(), g.len()),
            ));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter block '{}' at index {i}",
                block.name
            )));
        }
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((block, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            block.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scalar(w: &mut f64, g: f64, state: &mut AdamState) {
        let mut slot = [*w];
        adam_step(
            state,
            &mut [ParamBlock { name: "w", values: &mut slot }],
            &[&[g]],
        )
        .unwrap();
        *w = slot[0];
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut state = AdamState::new(AdamConfig::default(), &[3]);
        let mut w = [0.5, -1.0, 2.0];
        for _ in 0..50 {
            adam_step(
                &mut state,
                &mut [ParamBlock { name: "w", values: &mut w }],
                &[&[0.0; 3]],
            )
            .unwrap();
        }
        assert_eq!(w, [0.5, -1.0, 2.0]);
        assert!(state.first_moment()[0].iter().all(|&m| m == 0.0));
        assert_eq!(state.step_count(), 50);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        for g in [3.0, -0.25, 1e-3] {
            let mut state = AdamState::new(cfg, &[1]);
            let mut w = 1.0;
            step_scalar(&mut w, g, &mut state);
            let expected = cfg.lr * g / (g.abs() + cfg.eps);
            assert!(((1.0 - w) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn minimizes_quadratic() {
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        let mut state = AdamState::new(cfg, &[1]);
        let mut w = 1.0;
        for _ in 0..200 {
            let g = 2.0 * w;
            step_scalar(&mut w, g, &mut state);
        }

        // Independent scalar recurrence.
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=200 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((w - x).abs() <= 1e-12, "{w} vs {x}");
        assert!(w.abs() < 1e-2, "{w}");
    }

    #[test]
    fn non_finite_gradient_names_block_and_is_atomic() {
        let mut state = AdamState::new(AdamConfig::default(), &[1, 2]);
        let mut a = [1.0];
        let mut b = [1.0, 1.0];
        let err = adam_step(
            &mut state,
            &mut [
                ParamBlock { name: "first", values: &mut a },
                ParamBlock { name: "second", values: &mut b },
            ],
            &[&[1.0], &[0.0, f64::INFINITY]],
        )
        .unwrap_err();
        assert!(err.to_string().contains("second"));
        assert_eq!(a, [1.0]);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut state = AdamState::new(AdamConfig::default(), &[2]);
        let mut w = [0.0; 3];
        assert!(adam_step(
            &mut state,
            &mut [ParamBlock { name: "w", values: &mut w }],
            &[&[0.0; 3]]
        )
        .is_err());
    }
}
