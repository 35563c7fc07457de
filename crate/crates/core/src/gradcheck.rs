//! Central finite-difference check of [`crate::backprop::backward`].
//!
//! The loss is piecewise smooth. A parameter is excluded when moving it by
//! `kink_radius` in either direction changes the active branch of any
//! thresholding operator or the sign of any l1 residual, i.e. when it lies
//! within `kink_radius` of a kink.

use alloc::string::String;
use alloc::vec::Vec;

use crate::backprop::{backward, forward_traced};
use crate::data::SamplePair;
use crate::network::{ModuleTrace, ScscPnnModel};
use crate::prox::piecewise_branch;
use crate::{Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Parameters closer than this to a kink are skipped.
    pub kink_radius: f64,
    /// Lower bound on the relative-error denominator.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            kink_radius: 1e-3,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, abs_floor)`
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub checked: usize,
    pub excluded: usize,
}

fn push_soft(sig: &mut Vec<u8>, trace: &ModuleTrace, gammas: &[&[f64]]) {
    for (pre, gamma) in trace.pre.iter().zip(gammas) {
        let inner = pre.len() / gamma.len();
        for (i, &v) in pre.data().iter().enumerate() {
            let g = gamma[i / inner];
            sig.push(if v > g { 1 } else if v < -g { 2 } else { 0 });
        }
    }
}

fn push_piecewise(sig: &mut Vec<u8>, trace: &ModuleTrace, side: &Tensor, gammas: &[&[f64]]) {
    for (pre, gamma) in trace.pre.iter().zip(gammas) {
        let inner = pre.len() / gamma.len();
        for (i, (&v, &s)) in pre.data().iter().zip(side.data()).enumerate() {
            let branch = piecewise_branch(v, s, gamma[i / inner]) as u8;
            sig.push(if s < 0.0 { branch + 5 } else { branch });
        }
    }
}

fn module_gammas(m: &crate::network::ModuleParams) -> Vec<&[f64]> {
    core::iter::once(m.null_gamma.values())
        .chain(m.blocks.iter().map(|b| b.gamma.values()))
        .collect()
}

/// Batch loss together with the active branch of every non-smooth
/// operation.
pub fn loss_and_signature(model: &ScscPnnModel, batch: &[SamplePair]) -> Result<(f64, Vec<u8>)> {
    let mut sig = Vec::new();
    let mut total = 0.0;
    for sample in batch {
        let trace = forward_traced(&sample.l_up, &sample.pan, model)?;
        push_soft(&mut sig, &trace.siem, &module_gammas(&model.siem));
        push_soft(&mut sig, &trace.uiem, &module_gammas(&model.uiem));
        push_piecewise(&mut sig, &trace.ciem, trace.z(), &module_gammas(&model.ciem));
        let diff = trace.h_hat.sub(&sample.h)?;
        sig.extend(diff.data().iter().map(|&d| if d > 0.0 { 1 } else if d < 0.0 { 2 } else { 0 }));
        total += diff.l1_norm() / diff.len() as f64;
    }
    Ok((total / batch.len().max(1) as f64, sig))
}

pub fn gradient_check(
    model: &ScscPnnModel,
    batch: &[SamplePair],
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, grads) = backward(model, batch)?;
    let analytic = grads.to_flat();
    let base = model.to_flat();
    let (_, base_sig) = loss_and_signature(model, batch)?;
    let mask = model.threshold_mask();
    let mut probe = model.clone();
    let mut eval = |flat: &[f64]| -> Result<(f64, Vec<u8>)> {
        probe.load_flat(flat)?;
        loss_and_signature(&probe, batch)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        checked: 0,
        excluded: 0,
    };
    let mut flat = base.clone();
    for i in 0..base.len() {
        // thresholds sitting at their lower bound cannot move down
        if mask[i] && base[i] - options.kink_radius.max(options.step) < 0.0 {
            report.excluded += 1;
            continue;
        }
        flat[i] = base[i] + options.kink_radius;
        let (_, sig_hi) = eval(&flat)?;
        flat[i] = base[i] - options.kink_radius;
        let (_, sig_lo) = eval(&flat)?;
        if sig_hi != base_sig || sig_lo != base_sig {
            flat[i] = base[i];
            report.excluded += 1;
            continue;
        }
        flat[i] = base[i] + options.step;
        let (up, _) = eval(&flat)?;
        flat[i] = base[i] - options.step;
        let (down, _) = eval(&flat)?;
        flat[i] = base[i];
        let numeric = (up - down) / (2.0 * options.step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(options.abs_floor);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = model.param_name(i);
        }
    }
    Ok(report)
}
