//! Full-reference fusion quality metrics on `[B, h, w]` images normalised to
//! `[0, 1]`.
//!
//! Conventions:
//! - PSNR uses peak 1 and reports `f64::INFINITY` for identical images.
//! - SSIM is the band mean of the mean SSIM map, computed over valid
//!   window positions with an 11x11 Gaussian window (sigma 1.5),
//!   `C1 = 0.01^2`, `C2 = 0.03^2`. Images smaller than the window fall back
//!   to a uniform window as large as the shorter side allows (odd).
//! - SAM is the mean spectral angle in radians; pixels where either vector
//!   is zero are skipped.
//! - ERGAS is `(100 / r) sqrt(mean_b (RMSE_b / mean_b(ref))^2)`.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Metrics of one reconstructed/reference pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub sam: f64,
    pub ergas: f64,
}

fn check_pair(x: &Tensor, reference: &Tensor) -> Result<(usize, usize, usize)> {
    x.same_shape(reference, "metric inputs")?;
    reference.dims3()
}

pub fn mse(x: &Tensor, reference: &Tensor) -> Result<f64> {
    x.same_shape(reference, "mse")?;
    Ok(x.sub(reference)?.sum_squares() / x.len() as f64)
}

/// `10 log10(1 / MSE)`.
pub fn psnr(x: &Tensor, reference: &Tensor) -> Result<f64> {
    let m = mse(x, reference)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(1.0 / m))
}

fn ssim_window(h: usize, w: usize) -> (usize, Vec<f64>) {
    if h >= SSIM_WINDOW && w >= SSIM_WINDOW {
        let half = (SSIM_WINDOW / 2) as f64;
        let g: Vec<f64> = (0..SSIM_WINDOW)
            .map(|i| {
                let d = i as f64 - half;
                libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
            })
            .collect();
        let total: f64 = g.iter().sum();
        let mut win = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
        for a in &g {
            for b in &g {
                win.push(a * b / (total * total));
            }
        }
        (SSIM_WINDOW, win)
    } else {
        let mut size = h.min(w);
        if size % 2 == 0 {
            size -= 1;
        }
        let n = (size * size) as f64;
        (size, alloc::vec![1.0 / n; size * size])
    }
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, size: usize, win: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - size {
        for j in 0..=w - size {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for p in 0..size {
                for q in 0..size {
                    let wt = win[p * size + q];
                    let a = x[(i + p) * w + j + q];
                    let b = y[(i + p) * w + j + q];
                    mx += wt * a;
                    my += wt * b;
                    sxx += wt * a * a;
                    syy += wt * b * b;
                    sxy += wt * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    total / count as f64
}

pub fn ssim(x: &Tensor, reference: &Tensor) -> Result<f64> {
    let (bands, h, w) = check_pair(x, reference)?;
    if h == 0 || w == 0 {
        return Err(Error::dim("ssim needs a non-empty image"));
    }
    let (size, win) = ssim_window(h, w);
    let total: f64 = (0..bands)
        .map(|b| ssim_plane(x.channel(b), reference.channel(b), h, w, size, &win))
        .sum();
    Ok(total / bands as f64)
}

/// Mean spectral angle in radians.
pub fn sam(x: &Tensor, reference: &Tensor) -> Result<f64> {
    let (bands, h, w) = check_pair(x, reference)?;
    let plane = h * w;
    let (xd, rd) = (x.data(), reference.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..plane {
        let (mut nx, mut nr) = (0.0, 0.0);
        for b in 0..bands {
            let (u, v) = (xd[b * plane + i], rd[b * plane + i]);
            nx += u * u;
            nr += v * v;
        }
        if nx == 0.0 || nr == 0.0 {
            continue;
        }
        let (nx, nr) = (libm::sqrt(nx), libm::sqrt(nr));
        // 2 atan2(|u^ - v^|, |u^ + v^|) stays accurate near 0 and pi
        let (mut diff, mut sum) = (0.0, 0.0);
        for b in 0..bands {
            let (u, v) = (xd[b * plane + i] / nx, rd[b * plane + i] / nr);
            diff += (u - v) * (u - v);
            sum += (u + v) * (u + v);
        }
        total += 2.0 * libm::atan2(libm::sqrt(diff), libm::sqrt(sum));
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

pub fn ergas(x: &Tensor, reference: &Tensor, ratio: usize) -> Result<f64> {
    let (bands, _, _) = check_pair(x, reference)?;
    if ratio == 0 {
        return Err(Error::config("ERGAS ratio must be positive"));
    }
    let mut acc = 0.0;
    for b in 0..bands {
        let (xs, rs) = (x.channel(b), reference.channel(b));
        let n = rs.len() as f64;
        let mean = rs.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return Err(Error::Contract(format!("reference band {} has zero mean", b)));
        }
        let rmse = libm::sqrt(xs.iter().zip(rs).map(|(a, r)| (a - r) * (a - r)).sum::<f64>() / n);
        acc += (rmse / mean) * (rmse / mean);
    }
    Ok(100.0 / ratio as f64 * libm::sqrt(acc / bands as f64))
}

pub fn evaluate(x: &Tensor, reference: &Tensor, ratio: usize) -> Result<FusionMetrics> {
    Ok(FusionMetrics {
        psnr: psnr(x, reference)?,
        ssim: ssim(x, reference)?,
        sam: sam(x, reference)?,
        ergas: ergas(x, reference, ratio)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(bands: usize, h: usize, w: usize, seed: usize) -> Tensor {
        Tensor::from_fn(&[bands, h, w], |i| ((i * 7919 + seed * 104729) % 1000) as f64 / 1000.0)
    }

    #[test]
    fn identity_cases() {
        let r = image(3, 16, 16, 1);
        assert_eq!(psnr(&r, &r).unwrap(), f64::INFINITY);
        assert!((ssim(&r, &r).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(sam(&r, &r).unwrap(), 0.0);
        assert_eq!(ergas(&r, &r, 4).unwrap(), 0.0);
    }

    #[test]
    fn psnr_constant_offset() {
        let r = Tensor::full(&[2, 4, 4], 0.5);
        let x = r.map(|v| v + 0.1);
        assert!((psnr(&x, &r).unwrap() - 20.0).abs() < 1e-10);
    }

    #[test]
    fn inverted_image_scores_below_one() {
        let r = image(1, 16, 16, 2);
        let inv = r.map(|v| 1.0 - v);
        assert!(ssim(&inv, &r).unwrap() < 1.0);
    }

    #[test]
    fn sam_scale_invariant_and_orthogonal() {
        let r = image(3, 4, 4, 3).map(|v| v + 0.1);
        let x = r.scale(2.0);
        assert_eq!(sam(&x, &r).unwrap(), 0.0);
        let u = Tensor::from_fn(&[2, 3, 3], |i| if i < 9 { 1.0 } else { 0.0 });
        let v = Tensor::from_fn(&[2, 3, 3], |i| if i < 9 { 0.0 } else { 1.0 });
        assert!((sam(&u, &v).unwrap() - core::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn ergas_closed_form() {
        // RMSE equal to the band mean
        let r = Tensor::full(&[1, 4, 4], 0.5);
        let x = Tensor::full(&[1, 4, 4], 1.0);
        assert!((ergas(&x, &r, 4).unwrap() - 25.0).abs() < 1e-12);
        assert!(ergas(&x, &Tensor::zeros(&[1, 4, 4]), 4).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let a = Tensor::zeros(&[1, 4, 4]);
        let b = Tensor::zeros(&[1, 4, 5]);
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
        assert!(sam(&a, &b).is_err());
    }
}
