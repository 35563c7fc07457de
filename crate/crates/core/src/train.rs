//! Supervised training with the mean l1 loss and Adam.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backprop::accumulate_sample_gradients;
use crate::data::SamplePair;
use crate::network::ScscPnnModel;
use crate::{Error, Result, Tensor};

/// Mean absolute error over all elements.
pub fn l1_loss(h_hat: &Tensor, h: &Tensor) -> Result<f64> {
    h_hat.same_shape(h, "l1_loss")?;
    Ok(h_hat.sub(h)?.l1_norm() / h.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of a flat parameter vector.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(config.beta1, t as f64);
    let c2 = 1.0 - libm::pow(config.beta2, t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= learning_rate * m_hat / (libm::sqrt(v_hat) + config.eps);
    }
    Ok(())
}

/// Adam on every model parameter, then thresholds clipped at zero.
pub fn adam_step(
    model: &mut ScscPnnModel,
    grads: &ScscPnnModel,
    state: &mut AdamState,
    learning_rate: f64,
    config: &AdamConfig,
) -> Result<()> {
    if grads.config != model.config {
        return Err(Error::dim("gradient geometry differs from model"));
    }
    let mut flat = model.to_flat();
    adam_update(&mut flat, &grads.to_flat(), state, learning_rate, config)?;
    model.load_flat(&flat)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub patch_size: usize,
    pub ratio: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 5e-4,
            batch_size: 8,
            seed: 0,
            adam: AdamConfig::default(),
            patch_size: 32,
            ratio: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patch_size == 0 || self.ratio == 0 {
            return Err(Error::config(format!("counts must be positive: {:?}", self)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.patch_size % self.ratio != 0 {
            return Err(Error::config(format!(
                "patch size {} is not divisible by ratio {}",
                self.patch_size, self.ratio
            )));
        }
        Ok(())
    }
}

/// Trains for `config.epochs` shuffled minibatch sweeps and returns the
/// per-epoch mean loss (measured during the sweep, before each update).
pub fn train(
    model: &mut ScscPnnModel,
    dataset: &[SamplePair],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    train_with(model, dataset, config, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, loss)` after every epoch.
pub fn train_with(
    model: &mut ScscPnnModel,
    dataset: &[SamplePair],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::new(model.param_count());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut sample_loss = vec![0.0; dataset.len()];
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grads = ScscPnnModel::zeros(model.config)?;
            let n = batch.len() as f64;
            for &idx in batch {
                let sample = &dataset[idx];
                let scale = 1.0 / (n * sample.h.len() as f64);
                sample_loss[idx] = accumulate_sample_gradients(model, sample, scale, &mut grads)?;
            }
            if let Some(bad) = grads.to_flat().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: grads.param_name(bad).unwrap_or_default(),
                });
            }
            adam_step(model, &grads, &mut state, config.learning_rate, &config.adam)?;
        }
        // dataset order, so the value does not depend on the shuffle
        let loss = sample_loss.iter().sum::<f64>() / dataset.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        trace.push(loss);
        on_epoch(epoch, loss);
    }
    Ok(trace)
}
