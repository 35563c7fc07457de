//! Soft thresholding and piecewise soft thresholding, with vector-Jacobian
//! products for training.
//!
//! Both operators act per channel: the first axis of the input selects the
//! entry of the [`ThresholdVector`].
//!
//! `piecewise(x; s, g)` is the proximal map of `g * (|u| + |u - s|)`. For
//! `s >= 0` its branches, in order, are
//!
//! | branch | condition                 | value     |
//! |--------|---------------------------|-----------|
//! | 1      | `x < -2g`                 | `x + 2g`  |
//! | 2      | `-2g <= x <= 0`           | `0`       |
//! | 3      | `0 < x < s`               | `x`       |
//! | 4      | `s <= x <= s + 2g`        | `s`       |
//! | 5      | `x >= s + 2g`             | `x - 2g`  |
//!
//! and for `s < 0`
//!
//! | branch | condition                 | value     |
//! |--------|---------------------------|-----------|
//! | 1      | `x < s - 2g`              | `x + 2g`  |
//! | 2      | `s - 2g <= x <= s`        | `s`       |
//! | 3      | `s < x < 0`               | `x`       |
//! | 4      | `0 <= x <= 2g`            | `0`       |
//! | 5      | `x >= 2g`                 | `x - 2g`  |
//!
//! Where two conditions overlap the first listed branch wins, for both the
//! value and the derivative.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

/// Per-channel thresholds, all `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    values: Vec<f64>,
}

impl ThresholdVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Contract(format!(
                "thresholds must be finite and non-negative, got {}",
                v
            )));
        }
        Ok(ThresholdVector { values })
    }

    pub fn uniform(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Raw access for optimisers; call [`ThresholdVector::project`]
    /// afterwards.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Clips every entry at zero.
    pub fn project(&mut self) {
        for v in &mut self.values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }
}

/// Which piece of the piecewise operator an input falls on (1..=5, see the
/// module docs).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    ShiftUp = 1,
    Second = 2,
    PassThrough = 3,
    Fourth = 4,
    ShiftDown = 5,
}

#[inline]
pub fn soft(x: f64, gamma: f64) -> f64 {
    if x > gamma {
        x - gamma
    } else if x < -gamma {
        x + gamma
    } else {
        0.0
    }
}

#[inline]
pub fn piecewise_branch(x: f64, s: f64, gamma: f64) -> Branch {
    let g2 = 2.0 * gamma;
    if s >= 0.0 {
        if x < -g2 {
            Branch::ShiftUp
        } else if x <= 0.0 {
            Branch::Second
        } else if x < s {
            Branch::PassThrough
        } else if x <= s + g2 {
            Branch::Fourth
        } else {
            Branch::ShiftDown
        }
    } else if x < s - g2 {
        Branch::ShiftUp
    } else if x <= s {
        Branch::Second
    } else if x < 0.0 {
        Branch::PassThrough
    } else if x <= g2 {
        Branch::Fourth
    } else {
        Branch::ShiftDown
    }
}

/// `(value, d/dx, d/ds, d/dgamma)` on the branch selected for `(x, s)`.
#[inline]
pub fn piecewise_with_partials(x: f64, s: f64, gamma: f64) -> (f64, f64, f64, f64) {
    let g2 = 2.0 * gamma;
    // on branches 2 and 4 the clamp target is 0 on one side of s = 0 and s on
    // the other
    let clamp_to_s = |on_s: bool| if on_s { (s, 0.0, 1.0, 0.0) } else { (0.0, 0.0, 0.0, 0.0) };
    match piecewise_branch(x, s, gamma) {
        Branch::ShiftUp => (x + g2, 1.0, 0.0, 2.0),
        Branch::Second => clamp_to_s(s < 0.0),
        Branch::PassThrough => (x, 1.0, 0.0, 0.0),
        Branch::Fourth => clamp_to_s(s >= 0.0),
        Branch::ShiftDown => (x - g2, 1.0, 0.0, -2.0),
    }
}

#[inline]
pub fn piecewise(x: f64, s: f64, gamma: f64) -> f64 {
    piecewise_with_partials(x, s, gamma).0
}

fn check_channels(x: &Tensor, gamma: &ThresholdVector) -> Result<usize> {
    if x.shape()[0] != gamma.len() {
        return Err(Error::dim(format!(
            "{} channels but {} thresholds",
            x.shape()[0],
            gamma.len()
        )));
    }
    Ok(x.len() / gamma.len().max(1))
}

/// `sign(x) * max(|x| - gamma_c, 0)` with `gamma_c` the threshold of the
/// element's channel.
pub fn soft_threshold(x: &Tensor, gamma: &ThresholdVector) -> Result<Tensor> {
    let inner = check_channels(x, gamma)?;
    let mut out = x.clone();
    for (c, &g) in gamma.values().iter().enumerate() {
        for v in &mut out.data_mut()[c * inner..(c + 1) * inner] {
            *v = soft(*v, g);
        }
    }
    Ok(out)
}

/// `(grad_x, grad_gamma)`; the kink `|x| = gamma` takes subgradient 0.
pub fn soft_threshold_vjp(
    x: &Tensor,
    gamma: &ThresholdVector,
    upstream: &Tensor,
) -> Result<(Tensor, Vec<f64>)> {
    let inner = check_channels(x, gamma)?;
    x.same_shape(upstream, "soft_threshold_vjp")?;
    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_gamma = vec![0.0; gamma.len()];
    for (c, &g) in gamma.values().iter().enumerate() {
        let range = c * inner..(c + 1) * inner;
        let xs = &x.data()[range.clone()];
        let ups = &upstream.data()[range.clone()];
        let gx = &mut grad_x.data_mut()[range];
        let mut acc = 0.0;
        for ((gx, &xv), &u) in gx.iter_mut().zip(xs).zip(ups) {
            if xv > g {
                *gx = u;
                acc -= u;
            } else if xv < -g {
                *gx = u;
                acc += u;
            }
        }
        grad_gamma[c] = acc;
    }
    Ok((grad_x, grad_gamma))
}

pub fn piecewise_soft_threshold(
    x: &Tensor,
    side: &Tensor,
    gamma: &ThresholdVector,
) -> Result<Tensor> {
    x.same_shape(side, "piecewise_soft_threshold")?;
    let inner = check_channels(x, gamma)?;
    let mut out = x.clone();
    for (c, &g) in gamma.values().iter().enumerate() {
        let range = c * inner..(c + 1) * inner;
        let ss = &side.data()[range.clone()];
        for (v, &s) in out.data_mut()[range].iter_mut().zip(ss) {
            *v = piecewise(*v, s, g);
        }
    }
    Ok(out)
}

/// `(grad_x, grad_side, grad_gamma)` of [`piecewise_soft_threshold`].
pub fn piecewise_soft_threshold_vjp(
    x: &Tensor,
    side: &Tensor,
    gamma: &ThresholdVector,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    x.same_shape(side, "piecewise_soft_threshold_vjp")?;
    x.same_shape(upstream, "piecewise_soft_threshold_vjp")?;
    let inner = check_channels(x, gamma)?;
    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_s = Tensor::zeros(x.shape());
    let mut grad_gamma = vec![0.0; gamma.len()];
    for (c, &g) in gamma.values().iter().enumerate() {
        let mut acc = 0.0;
        for idx in c * inner..(c + 1) * inner {
            let (_, dx, ds, dg) = piecewise_with_partials(x.data()[idx], side.data()[idx], g);
            let u = upstream.data()[idx];
            grad_x.data_mut()[idx] = u * dx;
            grad_s.data_mut()[idx] = u * ds;
            acc += u * dg;
        }
        grad_gamma[c] = acc;
    }
    Ok((grad_x, grad_s, grad_gamma))
}
