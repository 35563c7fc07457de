//! Same-padded 2-D cross-correlation and its adjoint.
//!
//! `out[o, i, j] = sum_c sum_{p,q} w[o, c, p, q] * in[c, i + p - h, j + q - h]`
//! with `h = (s - 1) / 2` and zeros outside the image. [`rotate180`] turns a
//! bank into the bank of the adjoint operator.

use alloc::format;

use crate::{Error, FilterBank, Result, Tensor};

/// Index range of `j` such that `j + offset` stays inside `0..n`.
#[inline]
fn valid_range(n: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

/// Zero-padded, stride-1 cross-correlation; output keeps the input's `h x w`.
pub fn conv2d_same(input: &Tensor, bank: &FilterBank) -> Result<Tensor> {
    let (c_in, h, w) = input.dims3()?;
    if c_in != bank.c_in() {
        return Err(Error::dim(format!(
            "input has {} channels, bank expects {}",
            c_in,
            bank.c_in()
        )));
    }
    let c_out = bank.c_out();
    let s = bank.size();
    let half = (s / 2) as isize;
    let mut out = Tensor::zeros(&[c_out, h, w]);
    let src = input.data();
    let dst = out.data_mut();
    let plane = h * w;
    for o in 0..c_out {
        let out_plane = &mut dst[o * plane..(o + 1) * plane];
        for c in 0..c_in {
            let in_plane = &src[c * plane..(c + 1) * plane];
            let kernel = bank.kernel(o, c);
            for p in 0..s {
                let di = p as isize - half;
                let (i_lo, i_hi) = valid_range(h, di);
                for q in 0..s {
                    let wgt = kernel[p * s + q];
                    let dj = q as isize - half;
                    let (j_lo, j_hi) = valid_range(w, dj);
                    if wgt == 0.0 || j_lo == j_hi {
                        continue;
                    }
                    for i in i_lo..i_hi {
                        let si = (i as isize + di) as usize;
                        let out_row = &mut out_plane[i * w + j_lo..i * w + j_hi];
                        let sj = (j_lo as isize + dj) as usize;
                        let in_row = &in_plane[si * w + sj..si * w + sj + (j_hi - j_lo)];
                        for (y, &x) in out_row.iter_mut().zip(in_row) {
                            *y += wgt * x;
                        }
                    }
                }
            }
        }
    }
    out.ensure_finite("conv2d_same")?;
    Ok(out)
}

/// Flips both spatial axes and swaps `c_out`/`c_in`, so that
/// `<conv(x, c), y> == <x, conv(y, rotate180(c))>`.
pub fn rotate180(bank: &FilterBank) -> FilterBank {
    let (c_out, c_in, s) = (bank.c_out(), bank.c_in(), bank.size());
    let mut rotated = FilterBank::zeros(c_in, c_out, s);
    let w = rotated.weights_mut();
    for o in 0..c_out {
        for c in 0..c_in {
            let k = bank.kernel(o, c);
            let base = (c * c_out + o) * s * s;
            for p in 0..s {
                for q in 0..s {
                    w[base + (s - 1 - p) * s + (s - 1 - q)] = k[p * s + q];
                }
            }
        }
    }
    rotated
}

/// Adds `scale * d<conv(input, bank), grad_out>/d bank` into `grad`.
pub fn accumulate_kernel_grad(
    grad: &mut FilterBank,
    input: &Tensor,
    grad_out: &Tensor,
    scale: f64,
) -> Result<()> {
    let (c_in, h, w) = input.dims3()?;
    let (c_out, gh, gw) = grad_out.dims3()?;
    if (gh, gw) != (h, w) || c_in != grad.c_in() || c_out != grad.c_out() {
        return Err(Error::dim(format!(
            "kernel gradient: input {:?}, upstream {:?}, bank [{}, {}]",
            input.shape(),
            grad_out.shape(),
            grad.c_out(),
            grad.c_in()
        )));
    }
    let s = grad.size();
    let half = (s / 2) as isize;
    let plane = h * w;
    let src = input.data();
    let up = grad_out.data();
    let gw_data = grad.weights_mut();
    for o in 0..c_out {
        let g_plane = &up[o * plane..(o + 1) * plane];
        for c in 0..c_in {
            let in_plane = &src[c * plane..(c + 1) * plane];
            let base = (o * c_in + c) * s * s;
            for p in 0..s {
                let di = p as isize - half;
                let (i_lo, i_hi) = valid_range(h, di);
                for q in 0..s {
                    let dj = q as isize - half;
                    let (j_lo, j_hi) = valid_range(w, dj);
                    if j_lo == j_hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for i in i_lo..i_hi {
                        let si = (i as isize + di) as usize;
                        let sj = (j_lo as isize + dj) as usize;
                        let g_row = &g_plane[i * w + j_lo..i * w + j_hi];
                        let in_row = &in_plane[si * w + sj..si * w + sj + (j_hi - j_lo)];
                        acc += g_row.iter().zip(in_row).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gw_data[base + p * s + q] += scale * acc;
                }
            }
        }
    }
    Ok(())
}
