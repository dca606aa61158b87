//! Fixed depthwise Sobel filters.
//!
//! Each input channel `c` yields two output channels, `2c` (x-gradient) and
//! `2c + 1` (y-gradient), using zero padding.

use super::Tensor3;
use crate::error::{shape_err, Result};

/// Row-major `[dy][dx]` Sobel x-gradient kernel.
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Transpose of [`SOBEL_X`].
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

pub fn sobel_depthwise(input: &Tensor3) -> Tensor3 {
    let (c, h, w) = input.shape();
    let mut out = Tensor3::zeros(2 * c, h, w);
    sobel_forward_into(input.data(), c, h, w, out.data_mut());
    out
}

/// Adjoint of [`sobel_depthwise`]: maps a `2C`-channel gradient back to `C` channels.
pub fn sobel_depthwise_backward(grad_out: &Tensor3) -> Result<Tensor3> {
    let (c2, h, w) = grad_out.shape();
    if c2 % 2 != 0 {
        return Err(shape_err("sobel_depthwise_backward channels", "even", c2));
    }
    let mut g = Tensor3::zeros(c2 / 2, h, w);
    sobel_backward_accumulate(grad_out.data(), c2 / 2, h, w, g.data_mut());
    Ok(g)
}

#[inline]
fn taps() -> impl Iterator<Item = (usize, isize, isize, f64)> {
    (0..2).flat_map(|which| {
        let k = if which == 0 { &SOBEL_X } else { &SOBEL_Y };
        (0..3).flat_map(move |dy| {
            (0..3).filter_map(move |dx| {
                let v = k[dy][dx];
                (v != 0.0).then_some((which, dy as isize - 1, dx as isize - 1, v))
            })
        })
    })
}

pub(crate) fn sobel_forward_into(input: &[f64], channels: usize, h: usize, w: usize, out: &mut [f64]) {
    let n = h * w;
    out[..2 * channels * n].fill(0.0);
    for c in 0..channels {
        let src = &input[c * n..(c + 1) * n];
        for (which, oy, ox, v) in taps() {
            let dst = &mut out[(2 * c + which) * n..(2 * c + which + 1) * n];
            for y in 0..h {
                let sy = y as isize + oy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let sx = x as isize + ox;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    dst[y * w + x] += v * src[sy as usize * w + sx as usize];
                }
            }
        }
    }
}

pub(crate) fn sobel_backward_accumulate(grad_out: &[f64], channels: usize, h: usize, w: usize, grad_in: &mut [f64]) {
    let n = h * w;
    for c in 0..channels {
        let dst = &mut grad_in[c * n..(c + 1) * n];
        for (which, oy, ox, v) in taps() {
            let g = &grad_out[(2 * c + which) * n..(2 * c + which + 1) * n];
            for y in 0..h {
                let sy = y as isize + oy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let sx = x as isize + ox;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    dst[sy as usize * w + sx as usize] += v * g[y * w + x];
                }
            }
        }
    }
}
