//! The unrolled pansharpening network.
//!
//! Three extraction modules share one recursion. Starting from a zero
//! feature map, the null block computes `f1 = shrink(e0*u)` and each of the
//! `T` following blocks computes
//!
//! ```text
//! f <- shrink(f - E*(D*f) + E*u)
//! ```
//!
//! with its own encoder `E` (image -> features), decoder `D`
//! (features -> image) and per-channel thresholds. The side-information
//! module (SIEM) encodes the PAN image `P` into `z` with soft thresholding;
//! the unique module (UIEM) encodes the upsampled LRMS image into `x`; the
//! common module (CIEM) encodes `L~ = L_up - proj_a*x` into `y` with
//! piecewise soft thresholding around `z`. The output is
//! `H^ = proj_alpha*x + proj_beta*y`. There are no biases.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::conv2d_same;
use crate::prox::{piecewise_soft_threshold, soft_threshold, ThresholdVector};
use crate::{Error, FilterBank, Result, Tensor};

/// Threshold value every learnable threshold starts from.
pub const INITIAL_THRESHOLD: f64 = 0.01;

/// Network geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// PAN channels `b`.
    pub pan_bands: usize,
    /// Multispectral bands `B`.
    pub ms_bands: usize,
    /// Feature channels `k`.
    pub filters: usize,
    /// Kernel size `s` (odd).
    pub kernel_size: usize,
    /// Unrolled blocks `T` after the null block.
    pub blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            pan_bands: 1,
            ms_bands: 4,
            filters: 64,
            kernel_size: 3,
            blocks: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pan_bands == 0 || self.ms_bands == 0 || self.filters == 0 || self.kernel_size == 0 {
            return Err(Error::config(format!("all extents must be positive: {:?}", self)));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::config(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

/// Closed-form learnable scalar count of one extraction module:
/// `(2T + 1) c k s^2 + (T + 1) k`.
pub fn count_module_params(image_channels: usize, filters: usize, kernel_size: usize, blocks: usize) -> usize {
    (2 * blocks + 1) * image_channels * filters * kernel_size * kernel_size + (blocks + 1) * filters
}

/// Closed-form learnable scalar count of the whole network:
/// `(2T + 1)(b + 2B) k s^2 + 3 (T + 1) k + 3 k B s^2`.
pub fn count_params(config: &ModelConfig) -> usize {
    let ModelConfig {
        pan_bands: b,
        ms_bands: bb,
        filters: k,
        kernel_size: s,
        blocks: t,
    } = *config;
    (2 * t + 1) * (b + 2 * bb) * k * s * s + 3 * (t + 1) * k + 3 * k * bb * s * s
}

/// Role of a learnable tensor; thresholds are projected onto `>= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Filter,
    Threshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrollBlockParams {
    /// `[k, c_img, s, s]`
    pub encoder: FilterBank,
    /// `[c_img, k, s, s]`
    pub decoder: FilterBank,
    pub gamma: ThresholdVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleParams {
    /// `[k, c_img, s, s]`
    pub null_encoder: FilterBank,
    pub null_gamma: ThresholdVector,
    pub blocks: Vec<UnrollBlockParams>,
}

/// Shrinkage applied after every block.
#[derive(Debug, Clone, Copy)]
pub enum Shrinkage<'a> {
    Soft,
    Piecewise { side: &'a Tensor },
}

impl Shrinkage<'_> {
    pub(crate) fn apply(&self, pre: &Tensor, gamma: &ThresholdVector) -> Result<Tensor> {
        match self {
            Shrinkage::Soft => soft_threshold(pre, gamma),
            Shrinkage::Piecewise { side } => piecewise_soft_threshold(pre, side, gamma),
        }
    }
}

/// Intermediate values of one module evaluation, kept for backprop.
#[derive(Debug, Clone)]
pub struct ModuleTrace {
    /// Shrinkage inputs, `T + 1` of them (null block first).
    pub pre: Vec<Tensor>,
    /// Shrinkage outputs `f1..f_{T+1}`.
    pub features: Vec<Tensor>,
    /// `u - D_t*f_t` of every non-null block.
    pub residuals: Vec<Tensor>,
}

impl ModuleTrace {
    pub fn output(&self) -> &Tensor {
        self.features.last().expect("module trace has at least the null block")
    }
}

impl ModuleParams {
    pub fn zeros(image_channels: usize, filters: usize, kernel_size: usize, blocks: usize) -> Self {
        let gamma = || ThresholdVector::uniform(filters, 0.0).expect("zero thresholds are valid");
        ModuleParams {
            null_encoder: FilterBank::zeros(filters, image_channels, kernel_size),
            null_gamma: gamma(),
            blocks: (0..blocks)
                .map(|_| UnrollBlockParams {
                    encoder: FilterBank::zeros(filters, image_channels, kernel_size),
                    decoder: FilterBank::zeros(image_channels, filters, kernel_size),
                    gamma: gamma(),
                })
                .collect(),
        }
    }

    pub fn image_channels(&self) -> usize {
        self.null_encoder.c_in()
    }

    pub fn filters(&self) -> usize {
        self.null_encoder.c_out()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (c, _, _) = input.dims3()?;
        if c != self.image_channels() {
            return Err(Error::dim(format!(
                "module expects {} image channels, got {}",
                self.image_channels(),
                c
            )));
        }
        Ok(())
    }

    /// Evaluates the module and keeps every intermediate.
    pub fn forward_traced(&self, input: &Tensor, shrink: Shrinkage) -> Result<ModuleTrace> {
        self.check_input(input)?;
        if let Shrinkage::Piecewise { side } = shrink {
            let (k, h, w) = side.dims3()?;
            let (_, ih, iw) = input.dims3()?;
            if (k, h, w) != (self.filters(), ih, iw) {
                return Err(Error::dim(format!(
                    "side information {:?} does not match [{}, {}, {}]",
                    side.shape(),
                    self.filters(),
                    ih,
                    iw
                )));
            }
        }
        let mut pre = Vec::with_capacity(self.blocks.len() + 1);
        let mut features = Vec::with_capacity(self.blocks.len() + 1);
        let mut residuals = Vec::with_capacity(self.blocks.len());

        let p0 = conv2d_same(input, &self.null_encoder)?;
        features.push(shrink.apply(&p0, &self.null_gamma)?);
        pre.push(p0);
        for block in &self.blocks {
            let f = features.last().unwrap();
            let r = input.sub(&conv2d_same(f, &block.decoder)?)?;
            let mut p = conv2d_same(&r, &block.encoder)?;
            p.axpy(1.0, f)?;
            let next = shrink.apply(&p, &block.gamma)?;
            next.ensure_finite("module forward")?;
            residuals.push(r);
            pre.push(p);
            features.push(next);
        }
        Ok(ModuleTrace {
            pre,
            features,
            residuals,
        })
    }

    pub fn forward(&self, input: &Tensor, shrink: Shrinkage) -> Result<Tensor> {
        let mut trace = self.forward_traced(input, shrink)?;
        Ok(trace.features.pop().unwrap())
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }

    fn visit(&self, prefix: &str, f: &mut impl FnMut(String, ParamKind, &[f64])) {
        f(format!("{}.e0", prefix), ParamKind::Filter, self.null_encoder.weights());
        f(format!("{}.gamma0", prefix), ParamKind::Threshold, self.null_gamma.values());
        for (t, b) in self.blocks.iter().enumerate() {
            f(format!("{}.block{}.E", prefix, t), ParamKind::Filter, b.encoder.weights());
            f(format!("{}.block{}.D", prefix, t), ParamKind::Filter, b.decoder.weights());
            f(format!("{}.block{}.gamma", prefix, t), ParamKind::Threshold, b.gamma.values());
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, ParamKind, &mut [f64])) {
        f(format!("{}.e0", prefix), ParamKind::Filter, self.null_encoder.weights_mut());
        f(format!("{}.gamma0", prefix), ParamKind::Threshold, self.null_gamma.values_mut());
        for (t, b) in self.blocks.iter_mut().enumerate() {
            f(format!("{}.block{}.E", prefix, t), ParamKind::Filter, b.encoder.weights_mut());
            f(format!("{}.block{}.D", prefix, t), ParamKind::Filter, b.decoder.weights_mut());
            f(format!("{}.block{}.gamma", prefix, t), ParamKind::Threshold, b.gamma.values_mut());
        }
    }
}

/// All learnable parameters of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ScscPnnModel {
    pub config: ModelConfig,
    pub siem: ModuleParams,
    pub uiem: ModuleParams,
    pub ciem: ModuleParams,
    /// `[B, k, s, s]`, projects `x` when forming `L~`.
    pub proj_a: FilterBank,
    /// `[B, k, s, s]`
    pub proj_alpha: FilterBank,
    /// `[B, k, s, s]`
    pub proj_beta: FilterBank,
}

/// Output and feature maps of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub h_hat: Tensor,
    pub x: Tensor,
    pub y: Tensor,
    pub z: Tensor,
}

impl ScscPnnModel {
    /// All-zero parameters (also used as a gradient accumulator).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let ModelConfig {
            pan_bands: b,
            ms_bands: bb,
            filters: k,
            kernel_size: s,
            blocks: t,
        } = config;
        Ok(ScscPnnModel {
            config,
            siem: ModuleParams::zeros(b, k, s, t),
            uiem: ModuleParams::zeros(bb, k, s, t),
            ciem: ModuleParams::zeros(bb, k, s, t),
            proj_a: FilterBank::zeros(bb, k, s),
            proj_alpha: FilterBank::zeros(bb, k, s),
            proj_beta: FilterBank::zeros(bb, k, s),
        })
    }

    /// Enumerated learnable scalar count.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(|_, _, v| n += v.len());
        n
    }

    /// Visits every learnable tensor in canonical order with its name
    /// (`siem.e0`, `siem.gamma0`, `siem.block0.E`, ..., `proj_beta`).
    pub fn visit_params(&self, mut f: impl FnMut(String, ParamKind, &[f64])) {
        self.siem.visit("siem", &mut f);
        self.uiem.visit("uiem", &mut f);
        self.ciem.visit("ciem", &mut f);
        f("proj_a".into(), ParamKind::Filter, self.proj_a.weights());
        f("proj_alpha".into(), ParamKind::Filter, self.proj_alpha.weights());
        f("proj_beta".into(), ParamKind::Filter, self.proj_beta.weights());
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(String, ParamKind, &mut [f64])) {
        self.siem.visit_mut("siem", &mut f);
        self.uiem.visit_mut("uiem", &mut f);
        self.ciem.visit_mut("ciem", &mut f);
        f("proj_a".into(), ParamKind::Filter, self.proj_a.weights_mut());
        f("proj_alpha".into(), ParamKind::Filter, self.proj_alpha.weights_mut());
        f("proj_beta".into(), ParamKind::Filter, self.proj_beta.weights_mut());
    }

    /// Parameters concatenated in canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(|_, _, v| out.extend_from_slice(v));
        out
    }

    /// Inverse of [`ScscPnnModel::to_flat`]. Thresholds are projected onto
    /// `>= 0` afterwards.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(Error::dim(format!(
                "expected {} parameters, got {}",
                expected,
                flat.len()
            )));
        }
        let mut offset = 0;
        self.visit_params_mut(|_, kind, v| {
            v.copy_from_slice(&flat[offset..offset + v.len()]);
            if kind == ParamKind::Threshold {
                v.iter_mut().for_each(|g| *g = g.max(0.0));
            }
            offset += v.len();
        });
        Ok(())
    }

    /// Mask of threshold entries in [`ScscPnnModel::to_flat`] order.
    pub fn threshold_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(|_, kind, v| out.extend(v.iter().map(|_| kind == ParamKind::Threshold)));
        out
    }

    /// Name of the tensor holding flat index `index`.
    pub fn param_name(&self, index: usize) -> Option<String> {
        let mut offset = 0;
        let mut found = None;
        self.visit_params(|name, _, v| {
            if found.is_none() && index < offset + v.len() {
                found = Some(format!("{}[{}]", name, index - offset));
            }
            offset += v.len();
        });
        found
    }
}

pub fn siem_forward(pan: &Tensor, params: &ModuleParams) -> Result<Tensor> {
    params.forward(pan, Shrinkage::Soft)
}

pub fn uiem_forward(l_up: &Tensor, params: &ModuleParams) -> Result<Tensor> {
    params.forward(l_up, Shrinkage::Soft)
}

pub fn ciem_forward(l_tilde: &Tensor, side: &Tensor, params: &ModuleParams) -> Result<Tensor> {
    params.forward(l_tilde, Shrinkage::Piecewise { side })
}

fn check_inputs(l_up: &Tensor, pan: &Tensor, config: &ModelConfig) -> Result<()> {
    let (bb, h, w) = l_up.dims3()?;
    let (b, ph, pw) = pan.dims3()?;
    if (h, w) != (ph, pw) {
        return Err(Error::dim(format!(
            "upsampled LRMS is {}x{} but PAN is {}x{}",
            h, w, ph, pw
        )));
    }
    if bb != config.ms_bands || b != config.pan_bands {
        return Err(Error::dim(format!(
            "model expects {} MS / {} PAN bands, got {} / {}",
            config.ms_bands, config.pan_bands, bb, b
        )));
    }
    Ok(())
}

/// Full forward pass on one `(L_up, P)` pair.
pub fn forward(l_up: &Tensor, pan: &Tensor, model: &ScscPnnModel) -> Result<ForwardOutput> {
    check_inputs(l_up, pan, &model.config)?;
    let z = siem_forward(pan, &model.siem)?;
    let x = uiem_forward(l_up, &model.uiem)?;
    let l_tilde = l_up.sub(&conv2d_same(&x, &model.proj_a)?)?;
    let y = ciem_forward(&l_tilde, &z, &model.ciem)?;
    let h_hat = conv2d_same(&x, &model.proj_alpha)?.add(&conv2d_same(&y, &model.proj_beta)?)?;
    h_hat.ensure_finite("forward")?;
    Ok(ForwardOutput { h_hat, x, y, z })
}

/// Uniform init on `+-sqrt(1 / (c_in s^2))` per bank, thresholds at
/// [`INITIAL_THRESHOLD`]. Bit-identical for equal seeds.
pub fn init_params(config: ModelConfig, seed: u64) -> Result<ScscPnnModel> {
    let mut model = ScscPnnModel::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s2 = (config.kernel_size * config.kernel_size) as f64;
    let fill = |rng: &mut ChaCha8Rng, bank: &mut FilterBank| {
        let bound = libm::sqrt(1.0 / (bank.c_in() as f64 * s2));
        bank.weights_mut()
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-bound..=bound));
    };
    for module in [&mut model.siem, &mut model.uiem, &mut model.ciem] {
        fill(&mut rng, &mut module.null_encoder);
        module.null_gamma.values_mut().fill(INITIAL_THRESHOLD);
        for block in &mut module.blocks {
            fill(&mut rng, &mut block.encoder);
            fill(&mut rng, &mut block.decoder);
            block.gamma.values_mut().fill(INITIAL_THRESHOLD);
        }
    }
    for bank in [&mut model.proj_a, &mut model.proj_alpha, &mut model.proj_beta] {
        fill(&mut rng, bank);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            pan_bands: 1,
            ms_bands: 3,
            filters: 4,
            kernel_size: 3,
            blocks: 2,
        }
    }

    #[test]
    fn paper_configuration_counts() {
        assert_eq!(count_params(&ModelConfig::default()), 54_528);
        assert_eq!(count_module_params(1, 64, 3, 4), 5_504);
        let degenerate = ModelConfig {
            pan_bands: 1,
            ms_bands: 1,
            filters: 1,
            kernel_size: 1,
            blocks: 0,
        };
        assert_eq!(count_params(&degenerate), 9);
    }

    #[test]
    fn enumerated_count_matches_formula() {
        let model = init_params(ModelConfig::default(), 3).unwrap();
        assert_eq!(model.param_count(), 54_528);
        assert_eq!(model.siem.param_count(), 5_504);
    }

    #[test]
    fn zero_model_outputs_zero() {
        let model = ScscPnnModel::zeros(small()).unwrap();
        let l = Tensor::from_fn(&[3, 6, 6], |i| (i % 7) as f64 / 7.0);
        let p = Tensor::from_fn(&[1, 6, 6], |i| (i % 5) as f64 / 5.0);
        let out = forward(&l, &p, &model).unwrap();
        assert!(out.h_hat.data().iter().all(|&v| v == 0.0));
        assert!(out.z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn null_block_only_is_linear_encoding() {
        let mut params = ModuleParams::zeros(1, 3, 3, 0);
        params.null_encoder = FilterBank::from_fn(3, 1, 3, |i| i as f64 * 0.1 - 0.4);
        let p = Tensor::from_fn(&[1, 5, 5], |i| (i as f64 * 0.3).sin());
        let z = siem_forward(&p, &params).unwrap();
        assert_eq!(z, conv2d_same(&p, &params.null_encoder).unwrap());
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(small(), 11).unwrap();
        let b = init_params(small(), 11).unwrap();
        let c = init_params(small(), 12).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        assert_ne!(a.to_flat(), c.to_flat());
        assert!(a.siem.null_gamma.values().iter().all(|&g| g == INITIAL_THRESHOLD));
        assert!(a.ciem.blocks[1].gamma.values().iter().all(|&g| g == INITIAL_THRESHOLD));
        let bound = (1.0f64 / 27.0).sqrt();
        assert!(a.uiem.null_encoder.weights().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn flat_round_trip_and_names() {
        let a = init_params(small(), 1).unwrap();
        let mut b = ScscPnnModel::zeros(small()).unwrap();
        b.load_flat(&a.to_flat()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.param_name(0).unwrap(), "siem.e0[0]");
        assert_eq!(a.param_name(a.param_count() - 1).unwrap(), "proj_beta[107]");
        assert!(a.param_name(a.param_count()).is_none());
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let model = ScscPnnModel::zeros(small()).unwrap();
        let l = Tensor::zeros(&[3, 6, 6]);
        let p = Tensor::zeros(&[1, 6, 5]);
        assert!(matches!(forward(&l, &p, &model), Err(Error::Dimension(_))));
    }

    #[test]
    fn even_kernel_rejected() {
        let cfg = ModelConfig { kernel_size: 2, ..small() };
        assert!(ScscPnnModel::zeros(cfg).is_err());
    }
}
