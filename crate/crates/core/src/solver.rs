//! Classical ISTA solvers for the three sparse coding sub-problems and the
//! alternating scheme for the joint unique/common split.
//!
//! All objectives use the squared residual without a `1/2` factor:
//!
//! - plain CSC: `||I - d*f||^2 + lambda ||f||_1`
//! - common part: `||L~ - b*y||^2 + lambda (||y||_1 + ||y - z||_1)`
//! - joint: `||L - a*x - b*y||^2 + lambda (||x||_1 + ||y||_1 + ||y - z||_1)`
//!
//! One iteration is `f <- prox(f - t * d^T*(d*f - I))` with threshold
//! `t * lambda / 2`, which is proximal gradient with step `t / 2` on the
//! objectives above. The default `t = 1/L`, where `L` is the largest
//! eigenvalue of `f -> d^T*(d*f)`, guarantees monotone descent.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv2d_same, rotate180};
use crate::prox::{piecewise, soft};
use crate::{Error, FilterBank, Result, Tensor};

/// Absolute slack on objective increases before a run is declared divergent.
pub const DESCENT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    /// Use this step `t` (the `1/mu` of a hand-tuned solver).
    Fixed(f64),
    /// `t = 1/L` with `L` from [`estimate_lipschitz`].
    PowerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IstaSettings {
    pub max_iters: usize,
    /// Relative objective change below which a run may stop.
    pub tol: f64,
    /// Euclidean norm of the last iterate change below which a run may stop.
    /// Both this and `tol` must be met.
    pub residual_tol: f64,
    pub step_policy: StepPolicy,
    pub lambda: f64,
}

impl Default for IstaSettings {
    fn default() -> Self {
        IstaSettings {
            max_iters: 500,
            tol: 1e-8,
            residual_tol: 1e-7,
            step_policy: StepPolicy::PowerIteration,
            lambda: 0.01,
        }
    }
}

impl IstaSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::config("max_iters must be >= 1"));
        }
        if !(self.tol >= 0.0) || !(self.residual_tol >= 0.0) {
            return Err(Error::config("tolerances must be >= 0"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let StepPolicy::Fixed(t) = self.step_policy {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config(format!("fixed step must be > 0, got {}", t)));
            }
        }
        Ok(())
    }

    /// Runs exactly `iters` iterations (no early stopping).
    pub fn exact_iterations(lambda: f64, iters: usize) -> Self {
        IstaSettings {
            max_iters: iters,
            tol: 0.0,
            residual_tol: 0.0,
            lambda,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// The step `t` actually used.
    pub step: f64,
}

/// Power-iteration budget for [`estimate_lipschitz_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIteration {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        PowerIteration {
            max_iters: 50,
            rel_tol: 1e-6,
            seed: 0x5c5c,
        }
    }
}

/// Largest eigenvalue of `f -> d^T*(d*f)` on `[k, h, w]` feature maps, with
/// the default power-iteration budget.
pub fn estimate_lipschitz(dict: &FilterBank, spatial: (usize, usize)) -> Result<f64> {
    estimate_lipschitz_with(dict, spatial, PowerIteration::default())
}

pub fn estimate_lipschitz_with(
    dict: &FilterBank,
    spatial: (usize, usize),
    budget: PowerIteration,
) -> Result<f64> {
    if dict.is_zero() {
        return Err(Error::DegenerateOperator("dictionary is all zeros".into()));
    }
    let (h, w) = spatial;
    let adjoint = rotate180(dict);
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut v = Tensor::from_fn(&[dict.c_in(), h, w], |_| rng.gen_range(-1.0..1.0));
    let n = v.norm();
    v = v.scale(1.0 / n);
    let mut estimate = 0.0f64;
    for _ in 0..budget.max_iters.max(1) {
        let av = conv2d_same(&conv2d_same(&v, dict)?, &adjoint)?;
        let next = v.dot(&av)?;
        let norm = av.norm();
        if norm == 0.0 {
            return Err(Error::DegenerateOperator(
                "power iteration collapsed to zero".into(),
            ));
        }
        v = av.scale(1.0 / norm);
        let done = (next - estimate).abs() <= budget.rel_tol * next.abs();
        estimate = next;
        if done {
            break;
        }
    }
    if !(estimate > 0.0) {
        return Err(Error::DegenerateOperator(format!(
            "non-positive Lipschitz estimate {}",
            estimate
        )));
    }
    Ok(estimate)
}

/// Step `t` implied by `settings` for this dictionary and grid.
pub fn resolve_step(dict: &FilterBank, spatial: (usize, usize), settings: &IstaSettings) -> Result<f64> {
    match settings.step_policy {
        StepPolicy::Fixed(t) => Ok(t),
        StepPolicy::PowerIteration => Ok(1.0 / estimate_lipschitz(dict, spatial)?),
    }
}

#[derive(Clone, Copy)]
enum Penalty<'a> {
    L1,
    /// `||f||_1 + ||f - side||_1`
    Coupled(&'a Tensor),
}

impl Penalty<'_> {
    fn value(&self, f: &Tensor) -> f64 {
        match self {
            Penalty::L1 => f.l1_norm(),
            Penalty::Coupled(side) => {
                f.l1_norm()
                    + f.data()
                        .iter()
                        .zip(side.data())
                        .map(|(a, b)| (a - b).abs())
                        .sum::<f64>()
            }
        }
    }

    fn apply(&self, v: &mut Tensor, threshold: f64) {
        match self {
            Penalty::L1 => v.data_mut().iter_mut().for_each(|x| *x = soft(*x, threshold)),
            Penalty::Coupled(side) => v
                .data_mut()
                .iter_mut()
                .zip(side.data())
                .for_each(|(x, &s)| *x = piecewise(*x, s, threshold)),
        }
    }
}

fn check_problem(image: &Tensor, dict: &FilterBank) -> Result<(usize, usize)> {
    let (c, h, w) = image.dims3()?;
    if c != dict.c_out() {
        return Err(Error::dim(format!(
            "image has {} channels, dictionary synthesises {}",
            c,
            dict.c_out()
        )));
    }
    Ok((h, w))
}

fn check_features(f: &Tensor, dict: &FilterBank, spatial: (usize, usize)) -> Result<()> {
    let (k, h, w) = f.dims3()?;
    if k != dict.c_in() || (h, w) != spatial {
        return Err(Error::dim(format!(
            "feature maps {:?} do not fit dictionary with {} atoms on {}x{}",
            f.shape(),
            dict.c_in(),
            spatial.0,
            spatial.1
        )));
    }
    Ok(())
}

fn penalised_objective(
    image: &Tensor,
    dict: &FilterBank,
    f: &Tensor,
    lambda: f64,
    penalty: Penalty,
) -> Result<f64> {
    let spatial = check_problem(image, dict)?;
    check_features(f, dict, spatial)?;
    let residual = image.sub(&conv2d_same(f, dict)?)?;
    Ok(residual.sum_squares() + lambda * penalty.value(f))
}

/// `||I - d*f||^2 + lambda ||f||_1`
pub fn objective_csc(image: &Tensor, dict: &FilterBank, f: &Tensor, lambda: f64) -> Result<f64> {
    penalised_objective(image, dict, f, lambda, Penalty::L1)
}

/// `||L~ - b*y||^2 + lambda (||y||_1 + ||y - z||_1)`
pub fn objective_common(
    image: &Tensor,
    dict: &FilterBank,
    y: &Tensor,
    side: &Tensor,
    lambda: f64,
) -> Result<f64> {
    y.same_shape(side, "objective_common")?;
    penalised_objective(image, dict, y, lambda, Penalty::Coupled(side))
}

/// Objective of the joint unique/common decomposition.
#[allow(clippy::too_many_arguments)]
pub fn joint_objective(
    image: &Tensor,
    a: &FilterBank,
    x: &Tensor,
    b: &FilterBank,
    y: &Tensor,
    side: &Tensor,
    lambda: f64,
) -> Result<f64> {
    y.same_shape(side, "joint_objective")?;
    let residual = image.sub(&conv2d_same(x, a)?)?.sub(&conv2d_same(y, b)?)?;
    Ok(residual.sum_squares() + lambda * (x.l1_norm() + Penalty::Coupled(side).value(y)))
}

/// One ISTA iteration with step `t`; `side` selects the coupled penalty.
pub fn ista_iterate(
    image: &Tensor,
    dict: &FilterBank,
    side: Option<&Tensor>,
    f: &Tensor,
    step: f64,
    lambda: f64,
) -> Result<Tensor> {
    let spatial = check_problem(image, dict)?;
    check_features(f, dict, spatial)?;
    let penalty = match side {
        Some(s) => Penalty::Coupled(s),
        None => Penalty::L1,
    };
    let residual = conv2d_same(f, dict)?.sub(image)?;
    let grad = conv2d_same(&residual, &rotate180(dict))?;
    let mut next = f.clone();
    next.axpy(-step, &grad)?;
    penalty.apply(&mut next, step * lambda / 2.0);
    Ok(next)
}

fn run_ista(
    image: &Tensor,
    dict: &FilterBank,
    init: Option<Tensor>,
    settings: &IstaSettings,
    step: f64,
    penalty: Penalty,
) -> Result<(Tensor, SolveReport)> {
    let spatial = check_problem(image, dict)?;
    let adjoint = rotate180(dict);
    let threshold = step * settings.lambda / 2.0;
    let check_descent = settings.step_policy == StepPolicy::PowerIteration;

    let mut f = init.unwrap_or_else(|| Tensor::zeros(&[dict.c_in(), spatial.0, spatial.1]));
    check_features(&f, dict, spatial)?;
    // residual d*f - I of the current iterate
    let mut residual = conv2d_same(&f, dict)?.sub(image)?;
    let mut previous = residual.sum_squares() + settings.lambda * penalty.value(&f);
    let mut trace = Vec::with_capacity(settings.max_iters.min(4096));
    let mut converged = false;

    for iteration in 1..=settings.max_iters {
        let grad = conv2d_same(&residual, &adjoint)?;
        let mut next = f.clone();
        next.axpy(-step, &grad)?;
        penalty.apply(&mut next, threshold);
        let change = next.sub(&f)?.norm();
        residual = conv2d_same(&next, dict)?.sub(image)?;
        let current = residual.sum_squares() + settings.lambda * penalty.value(&next);
        if !current.is_finite() {
            return Err(Error::NonFinite(format!("ISTA objective at iteration {}", iteration)));
        }
        trace.push(current);
        if check_descent && current > previous + DESCENT_SLACK {
            return Err(Error::Divergence {
                iteration,
                previous,
                current,
            });
        }
        f = next;
        let rel = (previous - current).abs() / previous.abs().max(f64::MIN_POSITIVE);
        previous = current;
        if rel < settings.tol && change <= settings.residual_tol {
            converged = true;
            break;
        }
    }

    let report = SolveReport {
        iterations_run: trace.len(),
        objective_trace: trace,
        converged,
        step,
    };
    Ok((f, report))
}

/// Sparse codes of `image` over `dict`, starting from zero.
pub fn ista_csc(
    image: &Tensor,
    dict: &FilterBank,
    settings: &IstaSettings,
) -> Result<(Tensor, SolveReport)> {
    settings.validate()?;
    let spatial = check_problem(image, dict)?;
    let step = resolve_step(dict, spatial, settings)?;
    run_ista(image, dict, None, settings, step, Penalty::L1)
}

/// Unique feature maps `x` of the residualised image `L^ = L - b*y`.
pub fn ista_unique(
    l_hat: &Tensor,
    a: &FilterBank,
    settings: &IstaSettings,
) -> Result<(Tensor, SolveReport)> {
    ista_csc(l_hat, a, settings)
}

/// Common feature maps `y` of `L~ = L - a*x`, guided by side information `z`.
pub fn ista_common(
    l_tilde: &Tensor,
    b: &FilterBank,
    side: &Tensor,
    settings: &IstaSettings,
) -> Result<(Tensor, SolveReport)> {
    settings.validate()?;
    let spatial = check_problem(l_tilde, b)?;
    check_features(side, b, spatial)?;
    let step = resolve_step(b, spatial, settings)?;
    run_ista(l_tilde, b, None, settings, step, Penalty::Coupled(side))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlternatingSolution {
    pub x: Tensor,
    pub y: Tensor,
    /// Joint objective after every half-step (x update, then y update).
    pub report: SolveReport,
}

/// Block-coordinate descent on the joint problem: starting from `y = 0`,
/// each round solves for `x` with `y` fixed, then for `y` with `x` fixed.
/// Later rounds warm-start from the previous iterates.
pub fn alternate_solve(
    image: &Tensor,
    a: &FilterBank,
    b: &FilterBank,
    side: &Tensor,
    settings: &IstaSettings,
    rounds: usize,
) -> Result<AlternatingSolution> {
    settings.validate()?;
    if rounds < 1 {
        return Err(Error::config("rounds must be >= 1"));
    }
    let spatial = check_problem(image, a)?;
    check_problem(image, b)?;
    check_features(side, b, spatial)?;
    let step_a = resolve_step(a, spatial, settings)?;
    let step_b = resolve_step(b, spatial, settings)?;

    let mut x = Tensor::zeros(&[a.c_in(), spatial.0, spatial.1]);
    let mut y = Tensor::zeros(side.shape());
    let mut trace = Vec::with_capacity(2 * rounds);
    let mut converged = true;
    for _ in 0..rounds {
        let l_hat = image.sub(&conv2d_same(&y, b)?)?;
        let (nx, rep) = run_ista(&l_hat, a, Some(x), settings, step_a, Penalty::L1)?;
        x = nx;
        converged &= rep.converged;
        trace.push(joint_objective(image, a, &x, b, &y, side, settings.lambda)?);

        let l_tilde = image.sub(&conv2d_same(&x, a)?)?;
        let (ny, rep) = run_ista(&l_tilde, b, Some(y), settings, step_b, Penalty::Coupled(side))?;
        y = ny;
        converged &= rep.converged;
        trace.push(joint_objective(image, a, &x, b, &y, side, settings.lambda)?);
    }
    Ok(AlternatingSolution {
        x,
        y,
        report: SolveReport {
            iterations_run: trace.len(),
            objective_trace: trace,
            converged,
            step: step_a.min(step_b),
        },
    })
}
