//! Resampling: Catmull-Rom bicubic upsampling and Gaussian blur followed by
//! decimation (the degradation half of the Wald protocol).

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

const CUBIC_A: f64 = -0.5;

fn cubic_weight(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (CUBIC_A + 2.0) * x * x * x - (CUBIC_A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        CUBIC_A * x * x * x - 5.0 * CUBIC_A * x * x + 8.0 * CUBIC_A * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Four (index, weight) taps per output coordinate, with half-pixel centres
/// and edge replication.
fn cubic_taps(n_in: usize, ratio: usize) -> Vec<[(usize, f64); 4]> {
    let last = n_in as isize - 1;
    (0..n_in * ratio)
        .map(|dst| {
            let src = (dst as f64 + 0.5) / ratio as f64 - 0.5;
            let base = libm::floor(src);
            let t = src - base;
            let base = base as isize;
            let mut taps = [(0usize, 0.0); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let offset = k as isize - 1;
                let idx = (base + offset).clamp(0, last) as usize;
                *tap = (idx, cubic_weight(t - offset as f64));
            }
            taps
        })
        .collect()
}

/// Bicubic (Catmull-Rom, a = -0.5) upsampling by an integer `ratio`.
pub fn upsample_bicubic(img: &Tensor, ratio: usize) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if ratio < 1 {
        return Err(Error::config("upsampling ratio must be >= 1"));
    }
    if ratio == 1 {
        return Ok(img.clone());
    }
    let (oh, ow) = (h * ratio, w * ratio);
    let col_taps = cubic_taps(w, ratio);
    let row_taps = cubic_taps(h, ratio);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut wide = alloc::vec![0.0; h * ow];
    for ch in 0..c {
        let src = img.channel(ch);
        for i in 0..h {
            let row = &src[i * w..(i + 1) * w];
            for (j, taps) in col_taps.iter().enumerate() {
                wide[i * ow + j] = taps.iter().map(|&(k, wt)| wt * row[k]).sum();
            }
        }
        let dst = out.channel_mut(ch);
        for (i, taps) in row_taps.iter().enumerate() {
            let out_row = &mut dst[i * ow..(i + 1) * ow];
            for &(k, wt) in taps {
                let in_row = &wide[k * ow..(k + 1) * ow];
                for (y, &x) in out_row.iter_mut().zip(in_row) {
                    *y += wt * x;
                }
            }
        }
    }
    out.ensure_finite("upsample_bicubic")?;
    Ok(out)
}

/// Normalised 1-D Gaussian taps for offsets `-radius..=radius`, with
/// `radius = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("sigma must be positive, got {}", sigma)));
    }
    let radius = libm::ceil(3.0 * sigma) as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|d| libm::exp(-((d * d) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(taps)
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Separable Gaussian blur with reflective boundary; output keeps its size.
pub fn gaussian_blur(img: &Tensor, sigma: f64) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    let taps = gaussian_kernel(sigma)?;
    let radius = (taps.len() / 2) as isize;
    let mut out = Tensor::zeros(&[c, h, w]);
    let mut tmp = alloc::vec![0.0; h * w];
    for ch in 0..c {
        let src = img.channel(ch);
        for i in 0..h {
            for j in 0..w {
                tmp[i * w + j] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * src[i * w + reflect(j as isize + k as isize - radius, w)])
                    .sum();
            }
        }
        let dst = out.channel_mut(ch);
        for i in 0..h {
            for j in 0..w {
                dst[i * w + j] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * tmp[reflect(i as isize + k as isize - radius, h) * w + j])
                    .sum();
            }
        }
    }
    out.ensure_finite("gaussian_blur")?;
    Ok(out)
}

/// Gaussian blur then keep pixel `(0, 0)` of every `ratio x ratio` cell.
pub fn gaussian_blur_downsample(img: &Tensor, ratio: usize, sigma: f64) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if ratio < 1 {
        return Err(Error::config("downsampling ratio must be >= 1"));
    }
    if h % ratio != 0 || w % ratio != 0 {
        return Err(Error::dim(format!(
            "{}x{} image is not divisible by ratio {}",
            h, w, ratio
        )));
    }
    let blurred = gaussian_blur(img, sigma)?;
    let (oh, ow) = (h / ratio, w / ratio);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        let src = blurred.channel(ch);
        let dst = out.channel_mut(ch);
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[i * ratio * w + j * ratio];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn upsample_constant() {
        let img = Tensor::full(&[2, 3, 5], 0.7);
        let up = upsample_bicubic(&img, 2).unwrap();
        assert_eq!(up.shape(), &[2, 6, 10]);
        assert!(up.data().iter().all(|&v| close(v, 0.7, 1e-15)));
    }

    #[test]
    fn upsample_ratio_one_is_identity() {
        let img = Tensor::from_fn(&[1, 4, 4], |i| (i as f64).sin());
        assert_eq!(upsample_bicubic(&img, 1).unwrap(), img);
        assert!(upsample_bicubic(&img, 0).is_err());
    }

    #[test]
    fn upsample_reproduces_bilinear_ramp() {
        let (h, w, r) = (8, 8, 2);
        let f = |y: f64, x: f64| 0.1 + 0.03 * y + 0.02 * x + 0.004 * x * y;
        let img = Tensor::from_fn(&[1, h, w], |k| f((k / w) as f64, (k % w) as f64));
        let up = upsample_bicubic(&img, r).unwrap();
        let ow = w * r;
        // away from the clamped border the Catmull-Rom kernel is exact on
        // polynomials of degree <= 2 per axis
        for i in 4..h * r - 4 {
            for j in 4..ow - 4 {
                let sy = (i as f64 + 0.5) / r as f64 - 0.5;
                let sx = (j as f64 + 0.5) / r as f64 - 0.5;
                assert!(close(up.data()[i * ow + j], f(sy, sx), 1e-6));
            }
        }
    }

    #[test]
    fn downsample_constant() {
        let img = Tensor::full(&[1, 8, 8], 0.3);
        let low = gaussian_blur_downsample(&img, 4, 2.0).unwrap();
        assert_eq!(low.shape(), &[1, 2, 2]);
        assert!(low.data().iter().all(|&v| close(v, 0.3, 1e-12)));
    }

    #[test]
    fn downsample_impulse_samples_kernel() {
        let (n, r, sigma) = (32, 2, 1.0);
        let mut img = Tensor::zeros(&[1, n, n]);
        let (ci, cj) = (16, 16);
        img.data_mut()[ci * n + cj] = 1.0;
        let low = gaussian_blur_downsample(&img, r, sigma).unwrap();
        // independent evaluation of the normalised Gaussian
        let radius = 3i64;
        let norm: f64 = (-radius..=radius)
            .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
            .sum();
        let g = |d: i64| {
            if d.abs() > radius {
                0.0
            } else {
                (-(d * d) as f64 / (2.0 * sigma * sigma)).exp() / norm
            }
        };
        let on = n / r;
        for m in 0..on {
            for k in 0..on {
                let expect = g((m * r) as i64 - ci as i64) * g((k * r) as i64 - cj as i64);
                assert!(close(low.data()[m * on + k], expect, 1e-15));
            }
        }
    }

    #[test]
    fn tiny_sigma_is_identity() {
        let img = Tensor::from_fn(&[2, 6, 6], |i| ((i * 7) % 11) as f64 / 11.0);
        let out = gaussian_blur_downsample(&img, 1, 0.1).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!(close(*a, *b, 1e-6));
        }
    }

    #[test]
    fn downsample_rejects_indivisible() {
        let img = Tensor::zeros(&[1, 6, 8]);
        assert!(matches!(
            gaussian_blur_downsample(&img, 4, 1.0),
            Err(Error::Dimension(_))
        ));
        assert!(gaussian_blur_downsample(&Tensor::zeros(&[1, 4, 4]), 2, 0.0).is_err());
    }

    #[test]
    fn reflect_indexing() {
        let got: alloc::vec::Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, [2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }
}
