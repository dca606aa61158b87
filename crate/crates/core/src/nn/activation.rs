use super::Tensor3;
use crate::error::Result;

pub fn relu(input: &Tensor3) -> Tensor3 {
    let mut out = input.clone();
    relu_in_place(out.data_mut());
    out
}

pub(crate) fn relu_in_place(values: &mut [f64]) {
    for v in values {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

/// Gates `grad_out` by `input > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward(grad_out: &Tensor3, cached_input: &Tensor3) -> Result<Tensor3> {
    grad_out.check_shape("relu_backward grad_out", cached_input.shape())?;
    let mut g = grad_out.clone();
    relu_gate(g.data_mut(), cached_input.data());
    Ok(g)
}

pub(crate) fn relu_gate(grad: &mut [f64], pre_activation: &[f64]) {
    for (g, &x) in grad.iter_mut().zip(pre_activation) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;
    use crate::rng::seeded;

    #[test]
    fn clamps_negatives_and_zero() {
        let t = Tensor3::from_vec(1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor3::filled(1, 1, 3, 1.0);
        assert_eq!(relu_backward(&g, &t).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn positive_input_is_identity() {
        let t = Tensor3::from_vec(1, 2, 2, vec![0.5, 1.0, 3.0, 1e-9]).unwrap();
        assert_eq!(relu(&t), t);
        let g = Tensor3::from_vec(1, 2, 2, vec![4.0, -3.0, 2.0, 1.0]).unwrap();
        assert_eq!(relu_backward(&g, &t).unwrap(), g);
    }

    #[test]
    fn backward_matches_central_differences_away_from_kink() {
        let mut rng = seeded(11);
        let mut vals = Vec::new();
        while vals.len() < 64 {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if v.abs() > 1e-3 {
                vals.push(v);
            }
        }
        let input = Tensor3::from_vec(4, 4, 4, vals).unwrap();
        let weights: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |t: &Tensor3| -> f64 {
            relu(t).data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let g = relu_backward(
            &Tensor3::from_vec(4, 4, 4, weights.clone()).unwrap(),
            &input,
        )
        .unwrap();
        let eps = 1e-5;
        for i in 0..64 {
            let mut p = input.clone();
            p.data_mut()[i] += eps;
            let mut m = input.clone();
            m.data_mut()[i] -= eps;
            let num = (loss(&p) - loss(&m)) / (2.0 * eps);
            let a = g.data()[i];
            assert!((a - num).abs() / a.abs().max(num.abs()).max(1e-8) <= 1e-4);
        }
    }
}
