//! Same-padded 2D convolution (cross-correlation) with exact backward pass.
//!
//! Kernels are `(out_ch, in_ch, k, k)` with `k` in `{1, 3}` and zero padding of
//! `(k - 1) / 2`, so output spatial dims always equal input spatial dims.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Tensor3;
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    out_channels: usize,
    in_channels: usize,
    kernel_size: usize,
    kernel: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel_size: usize) -> Result<Self> {
        if kernel_size != 1 && kernel_size != 3 {
            return Err(Error::Config(format!(
                "kernel size must be 1 or 3, got {kernel_size}"
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_size,
            kernel: vec![0.0; out_channels * in_channels * kernel_size * kernel_size],
            bias: vec![0.0; out_channels],
        })
    }

    pub fn from_parts(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        kernel: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let mut p = Self::zeros(out_channels, in_channels, kernel_size)?;
        if kernel.len() != p.kernel.len() {
            return Err(shape_err("ConvParams kernel", p.kernel.len(), kernel.len()));
        }
        if bias.len() != out_channels {
            return Err(shape_err("ConvParams bias", out_channels, bias.len()));
        }
        if !kernel.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("convolution parameters".into()));
        }
        p.kernel = kernel;
        p.bias = bias;
        Ok(p)
    }

    /// Uniform `±1/sqrt(fan_in)` kernel, zero bias.
    pub fn uniform(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut p = Self::zeros(out_channels, in_channels, kernel_size)?;
        let bound = 1.0 / ((in_channels * kernel_size * kernel_size) as f64).sqrt();
        for w in &mut p.kernel {
            *w = rng.gen_range(-bound..bound);
        }
        Ok(p)
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    #[inline]
    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    #[inline]
    pub fn padding(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut [f64] {
        &mut self.kernel
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.kernel, &mut self.bias)
    }

    #[inline]
    pub fn weight(&self, o: usize, c: usize, dy: usize, dx: usize) -> f64 {
        let k = self.kernel_size;
        self.kernel[((o * self.in_channels + c) * k + dy) * k + dx]
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    /// Same-shaped zero container, used to accumulate gradients.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.out_channels, self.in_channels, self.kernel_size)
            .expect("kernel size already validated")
    }

    pub fn is_finite(&self) -> bool {
        self.kernel.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Gradients returned by [`conv2d_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor3,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Output index range `[lo, hi)` along one axis whose source `i + offset` is in bounds.
#[inline]
fn valid_range(offset: isize, n: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

pub fn conv2d_forward(input: &Tensor3, params: &ConvParams) -> Result<Tensor3> {
    if input.channels() != params.in_channels {
        return Err(shape_err(
            "conv2d_forward input channels",
            params.in_channels,
            input.channels(),
        ));
    }
    let (h, w) = (input.height(), input.width());
    let mut out = Tensor3::zeros(params.out_channels, h, w);
    forward_into(input.data(), h, w, params, out.data_mut());
    Ok(out)
}

/// Writes the convolution of `input` (`in_ch·h·w`) into `out` (`out_ch·h·w`).
pub(crate) fn forward_into(input: &[f64], h: usize, w: usize, params: &ConvParams, out: &mut [f64]) {
    let n = h * w;
    let k = params.kernel_size;
    let pad = params.padding() as isize;
    debug_assert_eq!(input.len(), params.in_channels * n);
    debug_assert_eq!(out.len(), params.out_channels * n);
    for (o, out_plane) in out.chunks_exact_mut(n).enumerate() {
        out_plane.fill(params.bias[o]);
        for c in 0..params.in_channels {
            let in_plane = &input[c * n..(c + 1) * n];
            for dy in 0..k {
                let oy = dy as isize - pad;
                let (y0, y1) = valid_range(oy, h);
                for dx in 0..k {
                    let wgt = params.weight(o, c, dy, dx);
                    if wgt == 0.0 {
                        continue;
                    }
                    let ox = dx as isize - pad;
                    let (x0, x1) = valid_range(ox, w);
                    for y in y0..y1 {
                        let sy = (y as isize + oy) as usize;
                        let src = &in_plane[sy * w + (x0 as isize + ox) as usize..][..x1 - x0];
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wgt * s;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_backward(
    grad_out: &Tensor3,
    cached_input: &Tensor3,
    params: &ConvParams,
) -> Result<ConvGrads> {
    if cached_input.channels() != params.in_channels {
        return Err(shape_err(
            "conv2d_backward input channels",
            params.in_channels,
            cached_input.channels(),
        ));
    }
    let (h, w) = (cached_input.height(), cached_input.width());
    grad_out.check_shape("conv2d_backward grad_out", (params.out_channels, h, w))?;
    let mut grads = ConvGrads {
        input: Tensor3::zeros(params.in_channels, h, w),
        kernel: vec![0.0; params.kernel.len()],
        bias: vec![0.0; params.out_channels],
    };
    backward_accumulate(
        grad_out.data(),
        cached_input.data(),
        h,
        w,
        params,
        Some(grads.input.data_mut()),
        &mut grads.kernel,
        &mut grads.bias,
    );
    Ok(grads)
}

/// Adds this layer's gradients into the provided buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_accumulate(
    grad_out: &[f64],
    input: &[f64],
    h: usize,
    w: usize,
    params: &ConvParams,
    mut grad_input: Option<&mut [f64]>,
    grad_kernel: &mut [f64],
    grad_bias: &mut [f64],
) {
    let n = h * w;
    let k = params.kernel_size;
    let pad = params.padding() as isize;
    for (o, g_plane) in grad_out.chunks_exact(n).enumerate() {
        grad_bias[o] += g_plane.iter().sum::<f64>();
        for c in 0..params.in_channels {
            let in_plane = &input[c * n..(c + 1) * n];
            for dy in 0..k {
                let oy = dy as isize - pad;
                let (y0, y1) = valid_range(oy, h);
                for dx in 0..k {
                    let ox = dx as isize - pad;
                    let (x0, x1) = valid_range(ox, w);
                    let widx = ((o * params.in_channels + c) * k + dy) * k + dx;
                    let wgt = params.kernel[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + oy) as usize;
                        let s0 = sy * w + (x0 as isize + ox) as usize;
                        let g = &g_plane[y * w + x0..y * w + x1];
                        let src = &in_plane[s0..s0 + (x1 - x0)];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(gi) = grad_input.as_deref_mut() {
                            if wgt != 0.0 {
                                let dst = &mut gi[c * n + s0..c * n + s0 + (x1 - x0)];
                                for (d, gv) in dst.iter_mut().zip(g) {
                                    *d += wgt * gv;
                                }
                            }
                        }
                    }
                    grad_kernel[widx] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;
    use crate::rng::seeded;

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut Rng) -> Tensor3 {
        let data = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor3::from_vec(c, h, w, data).unwrap()
    }

    fn random_params(o: usize, i: usize, k: usize, rng: &mut Rng) -> ConvParams {
        let kernel = (0..o * i * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias = (0..o).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ConvParams::from_parts(o, i, k, kernel, bias).unwrap()
    }

    /// Explicitly zero-pads the input, then sums the definition directly.
    fn direct_conv(input: &Tensor3, p: &ConvParams) -> Tensor3 {
        let (c_in, h, w) = input.shape();
        let k = p.kernel_size();
        let pad = p.padding();
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let mut padded = vec![0.0; c_in * hp * wp];
        for c in 0..c_in {
            for y in 0..h {
                for x in 0..w {
                    padded[(c * hp + y + pad) * wp + x + pad] = input.at(c, y, x);
                }
            }
        }
        let mut out = Tensor3::zeros(p.out_channels(), h, w);
        for o in 0..p.out_channels() {
            for y in 0..h {
                for x in 0..w {
                    let mut s = p.bias()[o];
                    for c in 0..c_in {
                        for dy in 0..k {
                            for dx in 0..k {
                                s += p.weight(o, c, dy, dx) * padded[(c * hp + y + dy) * wp + x + dx];
                            }
                        }
                    }
                    *out.at_mut(o, y, x) = s;
                }
            }
        }
        out
    }

    #[test]
    fn identity_1x1() {
        let mut rng = seeded(1);
        let input = random_tensor(1, 4, 5, &mut rng);
        let p = ConvParams::from_parts(1, 1, 1, vec![1.0], vec![0.0]).unwrap();
        assert_eq!(conv2d_forward(&input, &p).unwrap(), input);
    }

    #[test]
    fn all_ones_kernel_interior_and_corner() {
        let v = 1.5;
        let input = Tensor3::filled(1, 5, 5, v);
        let p = ConvParams::from_parts(1, 1, 3, vec![1.0; 9], vec![0.0]).unwrap();
        let out = conv2d_forward(&input, &p).unwrap();
        assert_eq!(out.at(0, 2, 2), 9.0 * v);
        assert_eq!(out.at(0, 0, 0), 4.0 * v);
        assert_eq!(out.at(0, 4, 4), 4.0 * v);
        assert_eq!(out.at(0, 0, 2), 6.0 * v);
    }

    #[test]
    fn matches_direct_summation_2ch_5x5() {
        let mut rng = seeded(2);
        let input = random_tensor(2, 5, 5, &mut rng);
        let p = random_params(4, 2, 3, &mut rng);
        let fast = conv2d_forward(&input, &p).unwrap();
        let slow = direct_conv(&input, &p);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn matches_direct_summation_100_cases() {
        let mut rng = seeded(3);
        for case in 0..100 {
            let c_in = rng.gen_range(1..5);
            let c_out = rng.gen_range(1..5);
            let h = rng.gen_range(1..8);
            let w = rng.gen_range(1..8);
            let k = if case % 3 == 0 { 1 } else { 3 };
            let input = random_tensor(c_in, h, w, &mut rng);
            let p = random_params(c_out, c_in, k, &mut rng);
            let fast = conv2d_forward(&input, &p).unwrap();
            assert_eq!(fast.shape(), (c_out, h, w));
            let slow = direct_conv(&input, &p);
            let err = fast
                .data()
                .iter()
                .zip(slow.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-12, "case {case}: {err}");
        }
    }

    #[test]
    fn channel_mismatch_names_dims() {
        let p = ConvParams::zeros(2, 3, 3).unwrap();
        let err = conv2d_forward(&Tensor3::zeros(2, 4, 4), &p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('2'), "{msg}");
        let err = conv2d_backward(&Tensor3::zeros(1, 4, 4), &Tensor3::zeros(3, 4, 4), &p).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn rejects_even_kernel() {
        assert!(ConvParams::zeros(1, 1, 2).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = seeded(4);
        let input = random_tensor(2, 4, 4, &mut rng);
        let p = random_params(3, 2, 3, &mut rng);
        let g = conv2d_backward(&Tensor3::zeros(3, 4, 4), &input, &p).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_backward_passes_grad_through() {
        let mut rng = seeded(5);
        let input = random_tensor(1, 3, 4, &mut rng);
        let grad = random_tensor(1, 3, 4, &mut rng);
        let p = ConvParams::from_parts(1, 1, 1, vec![1.0], vec![0.0]).unwrap();
        let g = conv2d_backward(&grad, &input, &p).unwrap();
        assert_eq!(g.input, grad);
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = seeded(6);
        let input = random_tensor(2, 4, 5, &mut rng);
        let p = random_params(3, 2, 3, &mut rng);
        let weights = random_tensor(3, 4, 5, &mut rng);
        let loss = |inp: &Tensor3, p: &ConvParams| -> f64 {
            let out = conv2d_forward(inp, p).unwrap();
            out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
        };
        let g = conv2d_backward(&weights, &input, &p).unwrap();
        let eps = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);

        for i in 0..input.data().len() {
            let mut plus = input.clone();
            plus.data_mut()[i] += eps;
            let mut minus = input.clone();
            minus.data_mut()[i] -= eps;
            let num = (loss(&plus, &p) - loss(&minus, &p)) / (2.0 * eps);
            assert!(rel(g.input.data()[i], num) <= 1e-4);
        }
        for i in 0..p.kernel().len() {
            let mut plus = p.clone();
            plus.kernel_mut()[i] += eps;
            let mut minus = p.clone();
            minus.kernel_mut()[i] -= eps;
            let num = (loss(&input, &plus) - loss(&input, &minus)) / (2.0 * eps);
            assert!(rel(g.kernel[i], num) <= 1e-4);
        }
        for i in 0..p.bias().len() {
            let mut plus = p.clone();
            plus.bias_mut()[i] += eps;
            let mut minus = p.clone();
            minus.bias_mut()[i] -= eps;
            let num = (loss(&input, &plus) - loss(&input, &minus)) / (2.0 * eps);
            assert!(rel(g.bias[i], num) <= 1e-4);
        }
    }
}
