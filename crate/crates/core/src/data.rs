//! Training samples: Wald-protocol degradation and a synthetic generator
//! standing in for real satellite scenes.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::resample::{gaussian_blur, gaussian_blur_downsample, upsample_bicubic};
use crate::{Error, Result, Tensor};

/// One supervised example. All three tensors share `h x w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    /// Reference HRMS `[B, h, w]`.
    pub h: Tensor,
    /// Upsampled LRMS `[B, h, w]`.
    pub l_up: Tensor,
    /// PAN `[b, h, w]`.
    pub pan: Tensor,
}

impl SamplePair {
    pub fn new(h: Tensor, l_up: Tensor, pan: Tensor) -> Result<Self> {
        h.same_shape(&l_up, "sample H vs L_up")?;
        let (_, hh, hw) = h.dims3()?;
        let (_, ph, pw) = pan.dims3()?;
        if (hh, hw) != (ph, pw) {
            return Err(Error::dim(format!(
                "PAN is {}x{} but HRMS is {}x{}",
                ph, pw, hh, hw
            )));
        }
        Ok(SamplePair { h, l_up, pan })
    }
}

/// Blur sigma used when none is given: `ratio / 2`.
pub fn default_wald_sigma(ratio: usize) -> f64 {
    ratio as f64 / 2.0
}

/// Degrades `h` to `(L_up, L)`: Gaussian blur + decimation by `ratio`,
/// then bicubic upsampling back to the original grid.
pub fn wald_degrade(h: &Tensor, ratio: usize, sigma: f64) -> Result<(Tensor, Tensor)> {
    let low = gaussian_blur_downsample(h, ratio, sigma)?;
    let up = upsample_bicubic(&low, ratio)?;
    Ok((up, low))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub ms_bands: usize,
    pub pan_bands: usize,
    pub size: usize,
    pub ratio: usize,
    /// Wald blur sigma; `None` means [`default_wald_sigma`].
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 8,
            ms_bands: 4,
            pan_bands: 1,
            size: 32,
            ratio: 4,
            sigma: None,
            seed: 0,
        }
    }
}

// spatial scales of the generator
const SHARED_SIGMA: f64 = 1.0;
const BAND_SIGMA: f64 = 3.0;
const BAND_WEIGHT: f64 = 0.4;
const CONTRAST: f64 = 0.12;

fn smooth_field(rng: &mut ChaCha8Rng, size: usize, sigma: f64) -> Result<Tensor> {
    let noise = Tensor::from_fn(&[1, size, size], |_| rng.gen_range(-1.0..1.0));
    let field = gaussian_blur(&noise, sigma)?;
    let mean = field.mean();
    let var = field.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / field.len() as f64;
    let std = libm::sqrt(var).max(1e-12);
    Ok(field.map(|v| (v - mean) / std))
}

/// Synthetic HRMS/PAN scenes: a fine-grained field shared by all bands plus
/// a coarser band-specific field, each band with its own gain and offset,
/// clipped to `[0, 1]`. PAN is the band mean of the clipped HRMS (repeated
/// over PAN channels); LRMS comes from [`wald_degrade`].
pub fn synth_dataset(config: &SynthConfig) -> Result<Vec<SamplePair>> {
    let SynthConfig {
        count,
        ms_bands,
        pan_bands,
        size,
        ratio,
        sigma,
        seed,
    } = *config;
    if ms_bands == 0 || pan_bands == 0 || size == 0 || ratio == 0 {
        return Err(Error::config(format!("invalid synth configuration {:?}", config)));
    }
    if size % ratio != 0 {
        return Err(Error::dim(format!(
            "patch size {} is not divisible by ratio {}",
            size, ratio
        )));
    }
    let sigma = sigma.unwrap_or_else(|| default_wald_sigma(ratio));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = size * size;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let shared = smooth_field(&mut rng, size, SHARED_SIGMA)?;
        let mut h = Tensor::zeros(&[ms_bands, size, size]);
        for band in 0..ms_bands {
            let own = smooth_field(&mut rng, size, BAND_SIGMA)?;
            let gain = rng.gen_range(0.7..1.3);
            let offset = rng.gen_range(-0.1..0.1);
            let dst = h.channel_mut(band);
            for i in 0..plane {
                let v = 0.5 + offset + CONTRAST * gain * (shared.data()[i] + BAND_WEIGHT * own.data()[i]);
                dst[i] = v.clamp(0.0, 1.0);
            }
        }
        let mut pan = Tensor::zeros(&[pan_bands, size, size]);
        for i in 0..plane {
            let mean = (0..ms_bands).map(|b| h.data()[b * plane + i]).sum::<f64>() / ms_bands as f64;
            for c in 0..pan_bands {
                pan.data_mut()[c * plane + i] = mean;
            }
        }
        let (l_up, _) = wald_degrade(&h, ratio, sigma)?;
        let l_up = l_up.map(|v| v.clamp(0.0, 1.0));
        out.push(SamplePair { h, l_up, pan });
    }
    Ok(out)
}

/// Splits every sample into non-overlapping `patch x patch` tiles (partial
/// tiles at the border are dropped).
pub fn tile_patches(samples: &[SamplePair], patch: usize) -> Result<Vec<SamplePair>> {
    if patch == 0 {
        return Err(Error::config("patch size must be positive"));
    }
    let mut out = Vec::new();
    for s in samples {
        let (_, h, w) = s.h.dims3()?;
        for top in (0..h / patch).map(|i| i * patch) {
            for left in (0..w / patch).map(|j| j * patch) {
                let crop = |t: &Tensor| -> Result<Tensor> {
                    let (c, _, tw) = t.dims3()?;
                    let mut o = Tensor::zeros(&[c, patch, patch]);
                    for ch in 0..c {
                        let src = t.channel(ch);
                        let dst = o.channel_mut(ch);
                        for i in 0..patch {
                            let row = (top + i) * tw + left;
                            dst[i * patch..(i + 1) * patch].copy_from_slice(&src[row..row + patch]);
                        }
                    }
                    Ok(o)
                };
                out.push(SamplePair {
                    h: crop(&s.h)?,
                    l_up: crop(&s.l_up)?,
                    pan: crop(&s.pan)?,
                });
            }
        }
    }
    Ok(out)
}
