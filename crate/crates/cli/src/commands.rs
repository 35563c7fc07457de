//! Command implementations shared by the `scsc` binary and the tests.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use scsc_core::data::{synth_dataset, tile_patches, SamplePair, SynthConfig};
use scsc_core::gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
use scsc_core::metrics::{evaluate, FusionMetrics};
use scsc_core::network::{count_module_params, count_params, forward, init_params};
use scsc_core::solver::{ista_csc, IstaSettings, SolveReport};
use scsc_core::train::train_with;
use scsc_core::{FilterBank, ModelConfig, ScscPnnModel, Tensor};

use crate::config::RunConfig;
use crate::container::TensorContainer;
use crate::error::{CliError, CliResult};

/// Threshold on the gradient-check relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Entry name of field `field` of sample `index`.
pub fn sample_entry(index: usize, field: &str) -> String {
    format!("sample{}.{}", index, field)
}

pub fn dataset_to_container(samples: &[SamplePair]) -> CliResult<TensorContainer> {
    let mut c = TensorContainer::new();
    for (i, s) in samples.iter().enumerate() {
        c.insert(sample_entry(i, "H"), s.h.clone())?;
        c.insert(sample_entry(i, "L_up"), s.l_up.clone())?;
        c.insert(sample_entry(i, "P"), s.pan.clone())?;
    }
    Ok(c)
}

/// Reads `sample0.*`, `sample1.*`, ... until the first missing index.
pub fn dataset_from_container(c: &TensorContainer) -> CliResult<Vec<SamplePair>> {
    let mut out = Vec::new();
    while c.get(&sample_entry(out.len(), "H")).is_some() {
        let i = out.len();
        let pair = SamplePair::new(
            c.require(&sample_entry(i, "H"))?.clone(),
            c.require(&sample_entry(i, "L_up"))?.clone(),
            c.require(&sample_entry(i, "P"))?.clone(),
        )
        .map_err(|e| CliError::Format(format!("sample {}: {}", i, e)))?;
        out.push(pair);
    }
    if c.len() != 3 * out.len() {
        return Err(CliError::Format(format!(
            "dataset has {} entries, expected 3 per sample for {} samples",
            c.len(),
            out.len()
        )));
    }
    Ok(out)
}

fn param_shape(cfg: &ModelConfig, name: &str) -> Vec<usize> {
    let (k, s) = (cfg.filters, cfg.kernel_size);
    let c = if name.starts_with("siem.") { cfg.pan_bands } else { cfg.ms_bands };
    if name.ends_with("gamma") || name.ends_with("gamma0") {
        vec![k]
    } else if name.ends_with(".D") || name.starts_with("proj_") {
        vec![c, k, s, s]
    } else {
        vec![k, c, s, s]
    }
}

/// Checkpoint: a `config` record `[b, B, k, s, T]` followed by every
/// parameter tensor under its canonical name.
pub fn model_to_container(model: &ScscPnnModel) -> CliResult<TensorContainer> {
    let cfg = model.config;
    let mut c = TensorContainer::new();
    let record = [cfg.pan_bands, cfg.ms_bands, cfg.filters, cfg.kernel_size, cfg.blocks];
    c.insert("config", Tensor::new(&[5], record.iter().map(|&v| v as f64).collect())?)?;
    let mut result = Ok(());
    model.visit_params(|name, _, v| {
        if result.is_ok() {
            result = Tensor::new(&param_shape(&cfg, &name), v.to_vec())
                .map_err(CliError::from)
                .and_then(|t| c.insert(name, t));
        }
    });
    result.map(|_| c)
}

pub fn model_from_container(c: &TensorContainer) -> CliResult<ScscPnnModel> {
    let record = c.require("config")?;
    let vals = record.data();
    if record.shape() != [5] || vals.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
        return Err(CliError::Format(format!("malformed config record {:?}", vals)));
    }
    let cfg = ModelConfig {
        pan_bands: vals[0] as usize,
        ms_bands: vals[1] as usize,
        filters: vals[2] as usize,
        kernel_size: vals[3] as usize,
        blocks: vals[4] as usize,
    };
    let mut model =
        ScscPnnModel::zeros(cfg).map_err(|e| CliError::Format(format!("checkpoint config: {}", e)))?;
    let mut result = Ok(());
    let mut seen = 0;
    model.visit_params_mut(|name, kind, dst| {
        if result.is_err() {
            return;
        }
        let expected = param_shape(&cfg, &name);
        result = match c.get(&name) {
            None => Err(CliError::Format(format!("checkpoint lacks {}", name))),
            Some(t) if t.shape() != expected.as_slice() => Err(CliError::Format(format!(
                "{} has shape {:?}, expected {:?}",
                name,
                t.shape(),
                expected
            ))),
            Some(t) if kind == scsc_core::network::ParamKind::Threshold && t.data().iter().any(|g| *g < 0.0) => {
                Err(CliError::Format(format!("{} holds negative thresholds", name)))
            }
            Some(t) => {
                dst.copy_from_slice(t.data());
                seen += 1;
                Ok(())
            }
        };
    });
    result?;
    if seen + 1 != c.len() {
        return Err(CliError::Format("checkpoint has unrecognised entries".into()));
    }
    if model.param_count() != count_params(&cfg) {
        return Err(CliError::Format(format!(
            "checkpoint holds {} parameters, closed form gives {}",
            model.param_count(),
            count_params(&cfg)
        )));
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthArgs {
    pub count: usize,
    pub bands: usize,
    pub pan_bands: usize,
    pub size: usize,
    pub ratio: usize,
    pub seed: u64,
    pub sigma: Option<f64>,
}

impl SynthArgs {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            count: self.count,
            ms_bands: self.bands,
            pan_bands: self.pan_bands,
            size: self.size,
            ratio: self.ratio,
            sigma: self.sigma,
            seed: self.seed,
        }
    }
}

pub fn cmd_synth(args: &SynthArgs, out: &Path) -> CliResult<()> {
    let samples = synth_dataset(&args.synth_config())?;
    dataset_to_container(&samples)?.save(out)
}

fn load_dataset(path: &Path) -> CliResult<Vec<SamplePair>> {
    dataset_from_container(&TensorContainer::load(path)?)
}

/// Trains a freshly initialised model (seeded by `seed`). Geometry keys
/// `b`/`B` left unset in the config are taken from the data. Samples larger
/// than the training patch are tiled. Returns the model and the loss trace.
pub fn cmd_train(
    data: &Path,
    config: &RunConfig,
    out_model: &Path,
    trace_path: Option<&Path>,
) -> CliResult<(ScscPnnModel, Vec<f64>)> {
    let samples = load_dataset(data)?;
    let first = samples
        .first()
        .ok_or_else(|| CliError::Usage("training set is empty".into()))?;
    let (ms, h, _) = first.h.dims3()?;
    let (pan, _, _) = first.pan.dims3()?;
    let mut cfg = config.clone();
    for (key, have, want) in [("B", &mut cfg.ms_bands, ms), ("b", &mut cfg.pan_bands, pan)] {
        if config.is_set(key) && *have != want {
            return Err(CliError::Usage(format!("config {} = {} but data has {}", key, have, want)));
        }
        *have = want;
    }
    let train_cfg = cfg.train_config();
    let samples = if h > train_cfg.patch_size && h % train_cfg.patch_size == 0 {
        tile_patches(&samples, train_cfg.patch_size)?
    } else {
        samples
    };

    let mut model = init_params(cfg.model_config(), cfg.seed)?;
    let mut text = String::new();
    let trace = train_with(&mut model, &samples, &train_cfg, |epoch, loss| {
        let _ = writeln!(text, "{},{}", epoch, loss);
    })?;
    model_to_container(&model)?.save(out_model)?;
    if let Some(p) = trace_path {
        fs::write(p, text).map_err(|e| CliError::io(p, e))?;
    }
    Ok((model, trace))
}

pub fn cmd_infer(model: &Path, data: &Path, out: &Path) -> CliResult<()> {
    let model = model_from_container(&TensorContainer::load(model)?)?;
    let samples = load_dataset(data)?;
    let mut c = TensorContainer::new();
    for (i, s) in samples.iter().enumerate() {
        c.insert(sample_entry(i, "H_hat"), forward(&s.l_up, &s.pan, &model)?.h_hat)?;
    }
    c.save(out)
}

/// One `id,psnr,ssim,sam,ergas` line. Values are printed with the shortest
/// round-trip representation; identical images give `psnr = inf`.
pub fn format_metrics(id: usize, m: &FusionMetrics) -> String {
    format!("{},{},{},{},{}", id, m.psnr, m.ssim, m.sam, m.ergas)
}

/// Scores `sample{i}.H_hat` (or `sample{i}.H`) of `pred` against
/// `sample{i}.H` of `reference`. Returns the report text.
pub fn cmd_eval(pred: &Path, reference: &Path, ratio: usize, out: Option<&Path>) -> CliResult<String> {
    let pred = TensorContainer::load(pred)?;
    let refs = load_dataset(reference)?;
    let mut report = String::new();
    for (i, s) in refs.iter().enumerate() {
        let x = pred
            .get(&sample_entry(i, "H_hat"))
            .or_else(|| pred.get(&sample_entry(i, "H")))
            .ok_or_else(|| CliError::Format(format!("prediction for sample {} missing", i)))?;
        let m = evaluate(x, &s.h, ratio)?;
        report.push_str(&format_metrics(i, &m));
        report.push('\n');
    }
    if let Some(p) = out {
        fs::write(p, &report).map_err(|e| CliError::io(p, e))?;
    }
    Ok(report)
}

/// The entry called `preferred`, or the only entry of the container.
pub fn single_entry<'a>(c: &'a TensorContainer, preferred: &str) -> CliResult<&'a Tensor> {
    match (c.get(preferred), c.entries()) {
        (Some(t), _) => Ok(t),
        (None, [only]) => Ok(&only.tensor),
        _ => Err(CliError::Format(format!(
            "expected an entry named {:?} or a single entry",
            preferred
        ))),
    }
}

/// Sparse-codes `image` (`[C, h, w]`) over `dict` (`[C, k, s, s]`) and
/// writes `features` and `objective_trace`.
pub fn cmd_csc_solve(
    image: &Path,
    dict: &Path,
    lambda: f64,
    iters: usize,
    out: &Path,
) -> CliResult<(Tensor, SolveReport)> {
    let ic = TensorContainer::load(image)?;
    let dc = TensorContainer::load(dict)?;
    let image = single_entry(&ic, "image")?;
    let dict = FilterBank::new(single_entry(&dc, "dict")?.clone())?;
    let settings = IstaSettings {
        max_iters: iters,
        lambda,
        ..IstaSettings::default()
    };
    let (f, report) = ista_csc(image, &dict, &settings)?;
    let mut c = TensorContainer::new();
    c.insert("features", f.clone())?;
    c.insert(
        "objective_trace",
        Tensor::new(&[report.objective_trace.len()], report.objective_trace.clone())?,
    )?;
    c.save(out)?;
    Ok((f, report))
}

/// Gradient check of a model built from `config`, seeded by `seed`, on two
/// synthetic samples of the smallest size >= 8 divisible by the ratio.
pub fn cmd_gradcheck(config: &RunConfig, seed: u64) -> CliResult<GradCheckReport> {
    let ratio = config.ratio.max(1);
    let size = 8usize.div_ceil(ratio) * ratio;
    let batch = synth_dataset(&SynthConfig {
        count: 2,
        ms_bands: config.ms_bands,
        pan_bands: config.pan_bands,
        size,
        ratio: config.ratio,
        sigma: config.sigma,
        seed,
    })?;
    let model = init_params(config.model_config(), seed)?;
    Ok(gradient_check(&model, &batch, &GradCheckOptions::default())?)
}

pub fn cmd_count_params(config: &RunConfig, siem_only: bool) -> CliResult<usize> {
    let cfg = config.model_config();
    cfg.validate()?;
    Ok(if siem_only {
        count_module_params(cfg.pan_bands, cfg.filters, cfg.kernel_size, cfg.blocks)
    } else {
        count_params(&cfg)
    })
}
