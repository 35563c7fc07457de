//! Reverse-mode gradients of the mean l1 loss through the unrolled network.
//!
//! The graph is fixed, so each module's backward pass walks its
//! [`ModuleTrace`] in reverse. Kinks follow the conventions of
//! [`crate::prox`]; the l1 loss uses `sign(0) = 0`. The side input `z` of
//! the common module is differentiated, so SIEM receives gradient through
//! it.

use alloc::vec::Vec;

use crate::conv::{accumulate_kernel_grad, conv2d_same, rotate180};
use crate::data::SamplePair;
use crate::network::{ModuleParams, ModuleTrace, ScscPnnModel, Shrinkage};
use crate::prox::{piecewise_soft_threshold_vjp, soft_threshold_vjp};
use crate::{Error, Result, Tensor};

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub siem: ModuleTrace,
    pub uiem: ModuleTrace,
    pub l_tilde: Tensor,
    pub ciem: ModuleTrace,
    pub h_hat: Tensor,
}

impl ForwardTrace {
    pub fn z(&self) -> &Tensor {
        self.siem.output()
    }

    pub fn x(&self) -> &Tensor {
        self.uiem.output()
    }

    pub fn y(&self) -> &Tensor {
        self.ciem.output()
    }
}

pub fn forward_traced(l_up: &Tensor, pan: &Tensor, model: &ScscPnnModel) -> Result<ForwardTrace> {
    // reuse the shape checks of the plain forward
    let (_, h, w) = l_up.dims3()?;
    let (_, ph, pw) = pan.dims3()?;
    if (h, w) != (ph, pw) {
        return Err(Error::dim(alloc::format!(
            "upsampled LRMS is {}x{} but PAN is {}x{}",
            h, w, ph, pw
        )));
    }
    let siem = model.siem.forward_traced(pan, Shrinkage::Soft)?;
    let uiem = model.uiem.forward_traced(l_up, Shrinkage::Soft)?;
    let l_tilde = l_up.sub(&conv2d_same(uiem.output(), &model.proj_a)?)?;
    let ciem = model.ciem.forward_traced(
        &l_tilde,
        Shrinkage::Piecewise {
            side: siem.output(),
        },
    )?;
    let h_hat = conv2d_same(uiem.output(), &model.proj_alpha)?
        .add(&conv2d_same(ciem.output(), &model.proj_beta)?)?;
    h_hat.ensure_finite("forward")?;
    Ok(ForwardTrace {
        siem,
        uiem,
        l_tilde,
        ciem,
        h_hat,
    })
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Backpropagates `grad_out` (w.r.t. the module output) through one module.
/// Parameter gradients are added into `grads`, the side-information
/// gradient into `grad_side`. Returns the gradient w.r.t. the module input.
pub fn module_backward(
    params: &ModuleParams,
    input: &Tensor,
    shrink: Shrinkage,
    trace: &ModuleTrace,
    grad_out: Tensor,
    grads: &mut ModuleParams,
    mut grad_side: Option<&mut Tensor>,
) -> Result<Tensor> {
    let mut grad_input = Tensor::zeros(input.shape());
    let mut g = grad_out;

    let mut through_shrink = |pre: &Tensor,
                              gamma: &crate::ThresholdVector,
                              upstream: &Tensor,
                              grad_gamma: &mut [f64]|
     -> Result<Tensor> {
        match shrink {
            Shrinkage::Soft => {
                let (gx, gg) = soft_threshold_vjp(pre, gamma, upstream)?;
                add_into(grad_gamma, &gg);
                Ok(gx)
            }
            Shrinkage::Piecewise { side } => {
                let (gx, gs, gg) = piecewise_soft_threshold_vjp(pre, side, gamma, upstream)?;
                add_into(grad_gamma, &gg);
                if let Some(acc) = grad_side.as_deref_mut() {
                    acc.axpy(1.0, &gs)?;
                }
                Ok(gx)
            }
        }
    };

    for (t, block) in params.blocks.iter().enumerate().rev() {
        let pre = &trace.pre[t + 1];
        let f = &trace.features[t];
        let r = &trace.residuals[t];
        let gb = &mut grads.blocks[t];
        let g_pre = through_shrink(pre, &block.gamma, &g, gb.gamma.values_mut())?;
        // pre = f + E*r,  r = u - D*f
        accumulate_kernel_grad(&mut gb.encoder, r, &g_pre, 1.0)?;
        let g_r = conv2d_same(&g_pre, &rotate180(&block.encoder))?;
        grad_input.axpy(1.0, &g_r)?;
        accumulate_kernel_grad(&mut gb.decoder, f, &g_r, -1.0)?;
        let mut g_f = g_pre;
        g_f.axpy(-1.0, &conv2d_same(&g_r, &rotate180(&block.decoder))?)?;
        g = g_f;
    }

    let g_pre0 = through_shrink(&trace.pre[0], &params.null_gamma, &g, grads.null_gamma.values_mut())?;
    accumulate_kernel_grad(&mut grads.null_encoder, input, &g_pre0, 1.0)?;
    grad_input.axpy(1.0, &conv2d_same(&g_pre0, &rotate180(&params.null_encoder))?)?;
    Ok(grad_input)
}

/// Adds `scale * d(sum |H^ - H|)/d(params)` for one sample into `grads` and
/// returns the sample's mean absolute error.
pub fn accumulate_sample_gradients(
    model: &ScscPnnModel,
    sample: &SamplePair,
    scale: f64,
    grads: &mut ScscPnnModel,
) -> Result<f64> {
    let trace = forward_traced(&sample.l_up, &sample.pan, model)?;
    let diff = trace.h_hat.sub(&sample.h)?;
    let loss = diff.l1_norm() / diff.len() as f64;
    let g_h = diff.map(|d| {
        if d > 0.0 {
            scale
        } else if d < 0.0 {
            -scale
        } else {
            0.0
        }
    });

    let (x, y, z) = (trace.x(), trace.y(), trace.z());
    accumulate_kernel_grad(&mut grads.proj_alpha, x, &g_h, 1.0)?;
    accumulate_kernel_grad(&mut grads.proj_beta, y, &g_h, 1.0)?;
    let mut g_x = conv2d_same(&g_h, &rotate180(&model.proj_alpha))?;
    let g_y = conv2d_same(&g_h, &rotate180(&model.proj_beta))?;

    let mut g_z = Tensor::zeros(z.shape());
    let g_l_tilde = module_backward(
        &model.ciem,
        &trace.l_tilde,
        Shrinkage::Piecewise { side: z },
        &trace.ciem,
        g_y,
        &mut grads.ciem,
        Some(&mut g_z),
    )?;
    // L~ = L_up - proj_a*x
    accumulate_kernel_grad(&mut grads.proj_a, x, &g_l_tilde, -1.0)?;
    g_x.axpy(-1.0, &conv2d_same(&g_l_tilde, &rotate180(&model.proj_a))?)?;

    module_backward(
        &model.uiem,
        &sample.l_up,
        Shrinkage::Soft,
        &trace.uiem,
        g_x,
        &mut grads.uiem,
        None,
    )?;
    module_backward(
        &model.siem,
        &sample.pan,
        Shrinkage::Soft,
        &trace.siem,
        g_z,
        &mut grads.siem,
        None,
    )?;
    Ok(loss)
}

/// Mean l1 loss over every element of the batch and its gradient, laid out
/// as a model of the same geometry.
pub fn backward(model: &ScscPnnModel, batch: &[SamplePair]) -> Result<(f64, ScscPnnModel)> {
    let mut grads = ScscPnnModel::zeros(model.config)?;
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let n = batch.len() as f64;
    let mut losses = Vec::with_capacity(batch.len());
    for sample in batch {
        let scale = 1.0 / (n * sample.h.len() as f64);
        losses.push(accumulate_sample_gradients(model, sample, scale, &mut grads)?);
    }
    let mut offending = None;
    grads.visit_params(|name, _, v| {
        if offending.is_none() && v.iter().any(|g| !g.is_finite()) {
            offending = Some(name);
        }
    });
    if let Some(param) = offending {
        return Err(Error::NonFiniteGradient { param });
    }
    Ok((losses.iter().sum::<f64>() / n, grads))
}
