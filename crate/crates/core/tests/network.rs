use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scsc_core::backprop::backward;
use scsc_core::conv::{conv2d_same, rotate180};
use scsc_core::data::{synth_dataset, SamplePair, SynthConfig};
use scsc_core::gradcheck::{gradient_check, GradCheckOptions};
use scsc_core::network::{
    ciem_forward, count_params, forward, init_params, siem_forward, uiem_forward, ModuleParams, UnrollBlockParams,
    INITIAL_THRESHOLD,
};
use scsc_core::solver::{estimate_lipschitz, ista_common, ista_csc, ista_unique, IstaSettings};
use scsc_core::{Error, FilterBank, ModelConfig, ScscPnnModel, Tensor, ThresholdVector};

fn cfg(b: usize, bb: usize, k: usize, s: usize, t: usize) -> ModelConfig {
    ModelConfig {
        pan_bands: b,
        ms_bands: bb,
        filters: k,
        kernel_size: s,
        blocks: t,
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

fn random_bank(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, s: usize) -> FilterBank {
    FilterBank::from_fn(c_out, c_in, s, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn zero_model_produces_zeros() {
    let model = ScscPnnModel::zeros(cfg(1, 3, 4, 3, 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward(&random(&mut rng, &[3, 6, 6]), &random(&mut rng, &[1, 6, 6]), &model).unwrap();
    for t in [&out.h_hat, &out.x, &out.y, &out.z] {
        assert!(t.data().iter().all(|&v| v == 0.0));
    }
    let side = Tensor::from_fn(&[4, 6, 6], |i| (i as f64 * 0.37).sin());
    let y = ciem_forward(&random(&mut rng, &[3, 6, 6]), &side, &model.ciem).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn null_block_without_threshold_is_linear_encoding() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut m = ModuleParams::zeros(1, 3, 3, 0);
    m.null_encoder = random_bank(&mut rng, 3, 1, 3);
    let pan = random(&mut rng, &[1, 5, 5]);
    assert_eq!(siem_forward(&pan, &m).unwrap(), conv2d_same(&pan, &m.null_encoder).unwrap());
}

fn tied(dict: &FilterBank, lambda: f64, blocks: usize, spatial: (usize, usize)) -> ModuleParams {
    let lip = estimate_lipschitz(dict, spatial).unwrap();
    let enc = rotate180(dict).scaled(1.0 / lip);
    let gamma = ThresholdVector::uniform(dict.c_in(), lambda / (2.0 * lip)).unwrap();
    ModuleParams {
        null_encoder: enc.clone(),
        null_gamma: gamma.clone(),
        blocks: (0..blocks)
            .map(|_| UnrollBlockParams {
                encoder: enc.clone(),
                decoder: dict.clone(),
                gamma: gamma.clone(),
            })
            .collect(),
    }
}

#[test]
fn tied_modules_follow_ista() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lambda = 0.08;
    for t in 0..=3 {
        let settings = IstaSettings::exact_iterations(lambda, t + 1);
        let c = random_bank(&mut rng, 1, 3, 3);
        let pan = random(&mut rng, &[1, 8, 8]);
        let (z, _) = ista_csc(&pan, &c, &settings).unwrap();
        assert!(siem_forward(&pan, &tied(&c, lambda, t, (8, 8))).unwrap().sub(&z).unwrap().max_abs() <= 1e-12);

        let a = random_bank(&mut rng, 2, 3, 3);
        let l = random(&mut rng, &[2, 8, 8]);
        let (x, _) = ista_unique(&l, &a, &settings).unwrap();
        assert!(uiem_forward(&l, &tied(&a, lambda, t, (8, 8))).unwrap().sub(&x).unwrap().max_abs() <= 1e-12);

        let side = Tensor::from_fn(&[3, 8, 8], |_| rng.gen_range(-0.3..0.3));
        let (y, _) = ista_common(&l, &a, &side, &settings).unwrap();
        let got = ciem_forward(&l, &side, &tied(&a, lambda, t, (8, 8))).unwrap();
        assert!(got.sub(&y).unwrap().max_abs() <= 1e-12);
    }
}

#[test]
fn ciem_with_zero_side_is_soft_module_with_double_thresholds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = init_params(cfg(1, 2, 3, 3, 2), 3).unwrap();
    let mut doubled = model.ciem.clone();
    for g in std::iter::once(&mut doubled.null_gamma).chain(doubled.blocks.iter_mut().map(|b| &mut b.gamma)) {
        *g = g.scaled(2.0).unwrap();
    }
    let l = random(&mut rng, &[2, 6, 6]).scale(5.0);
    let zero = Tensor::zeros(&[3, 6, 6]);
    assert_eq!(ciem_forward(&l, &zero, &model.ciem).unwrap(), uiem_forward(&l, &doubled).unwrap());
}

#[test]
fn residual_wiring_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = init_params(cfg(1, 3, 4, 3, 2), 4).unwrap();
    model.ciem = ModuleParams::zeros(3, 4, 3, 2);
    model.proj_beta = FilterBank::zeros(3, 4, 3);
    model.proj_alpha = model.proj_a.clone();
    let l_up = random(&mut rng, &[3, 8, 8]);
    let out = forward(&l_up, &random(&mut rng, &[1, 8, 8]), &model).unwrap();
    let l_tilde = l_up.sub(&conv2d_same(&out.x, &model.proj_a).unwrap()).unwrap();
    assert!(out.h_hat.sub(&l_up.sub(&l_tilde).unwrap()).unwrap().max_abs() <= 1e-12);
}

fn permute_out(bank: &FilterBank, perm: &[usize]) -> FilterBank {
    let per = bank.c_in() * bank.size() * bank.size();
    let w = bank.weights();
    let mut data = Vec::with_capacity(w.len());
    for &p in perm {
        data.extend_from_slice(&w[p * per..(p + 1) * per]);
    }
    FilterBank::new(Tensor::new(bank.tensor().shape(), data).unwrap()).unwrap()
}

fn permute_in(bank: &FilterBank, perm: &[usize]) -> FilterBank {
    let s2 = bank.size() * bank.size();
    let mut out = bank.clone();
    for o in 0..bank.c_out() {
        for (i, &p) in perm.iter().enumerate() {
            let src = bank.kernel(o, p).to_vec();
            let base = (o * bank.c_in() + i) * s2;
            out.weights_mut()[base..base + s2].copy_from_slice(&src);
        }
    }
    out
}

fn permute_module(m: &ModuleParams, perm: &[usize]) -> ModuleParams {
    let gamma = |g: &ThresholdVector| ThresholdVector::new(perm.iter().map(|&p| g.values()[p]).collect()).unwrap();
    ModuleParams {
        null_encoder: permute_out(&m.null_encoder, perm),
        null_gamma: gamma(&m.null_gamma),
        blocks: m
            .blocks
            .iter()
            .map(|b| UnrollBlockParams {
                encoder: permute_out(&b.encoder, perm),
                decoder: permute_in(&b.decoder, perm),
                gamma: gamma(&b.gamma),
            })
            .collect(),
    }
}

#[test]
fn feature_permutation_leaves_output_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = init_params(cfg(1, 3, 5, 3, 2), 5).unwrap();
    model.visit_params_mut(|_, kind, v| {
        if kind == scsc_core::network::ParamKind::Threshold {
            v.iter_mut().for_each(|g| *g = rng.gen_range(0.0..0.05));
        }
    });
    let perm = [3, 0, 4, 2, 1];
    let permuted = ScscPnnModel {
        config: model.config,
        siem: permute_module(&model.siem, &perm),
        uiem: permute_module(&model.uiem, &perm),
        ciem: permute_module(&model.ciem, &perm),
        proj_a: permute_in(&model.proj_a, &perm),
        proj_alpha: permute_in(&model.proj_alpha, &perm),
        proj_beta: permute_in(&model.proj_beta, &perm),
    };
    let l_up = random(&mut rng, &[3, 8, 8]);
    let pan = random(&mut rng, &[1, 8, 8]);
    let a = forward(&l_up, &pan, &model).unwrap().h_hat;
    let b = forward(&l_up, &pan, &permuted).unwrap().h_hat;
    assert!(a.sub(&b).unwrap().max_abs() <= 1e-12);
}

#[test]
fn init_is_deterministic_and_counts_match() {
    let c = cfg(1, 4, 8, 3, 3);
    let a = init_params(c, 9).unwrap();
    assert_eq!(a, init_params(c, 9).unwrap());
    assert_ne!(a, init_params(c, 10).unwrap());
    assert_eq!(a.param_count(), count_params(&c));
    let mut gammas = Vec::new();
    a.visit_params(|name, _, v| {
        if name.contains("gamma") {
            gammas.extend_from_slice(v);
        }
    });
    assert!(gammas.iter().all(|&g| g == INITIAL_THRESHOLD));
    let bound = (1.0f64 / 9.0).sqrt();
    assert!(a.proj_alpha.weights().iter().all(|w| w.abs() <= (1.0f64 / (8.0 * 9.0)).sqrt()));
    assert!(a.siem.null_encoder.weights().iter().all(|w| w.abs() <= bound));
}

#[test]
fn spatial_mismatch_is_rejected() {
    let model = ScscPnnModel::zeros(cfg(1, 2, 2, 3, 1)).unwrap();
    let err = forward(&Tensor::zeros(&[2, 6, 6]), &Tensor::zeros(&[1, 6, 5]), &model).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
    assert!(forward(&Tensor::zeros(&[3, 6, 6]), &Tensor::zeros(&[1, 6, 6]), &model).is_err());
    assert!(ScscPnnModel::zeros(cfg(1, 2, 2, 4, 1)).is_err());
}

fn scalar_model(vals: [f64; 9]) -> ScscPnnModel {
    let mut m = ScscPnnModel::zeros(cfg(1, 1, 1, 1, 0)).unwrap();
    let mut i = 0;
    m.visit_params_mut(|_, _, v| {
        v[0] = vals[i];
        i += 1;
    });
    m
}

fn scalar_sample() -> SamplePair {
    let t = |v: f64| Tensor::full(&[1, 1, 1], v);
    SamplePair::new(t(0.3), t(0.8), t(1.0)).unwrap()
}

#[test]
fn scalar_network_gradients_match_hand_derivation() {
    // order: siem.e0, siem.gamma0, uiem.e0, uiem.gamma0, ciem.e0, ciem.gamma0,
    // proj_a, proj_alpha, proj_beta. P = 1, L = 0.8, H = 0.3.
    // z = 0.9 - 0.1 = 0.8, x = 0.8 - 0.2 = 0.6, L~ = 0.8 - 0.5 * 0.6 = 0.5
    //
    // e_c = 1.7: pre = 0.85 in [z, z + 2g] so y = z = 0.8,
    // H^ = 0.7 * 0.6 + 0.4 * 0.8 = 0.74 > H, dL/dH^ = 1
    //   dz = 0.4 -> (e_s, g_s) = (0.4 * P, -0.4); dx = 0.7 -> (0.7 * L, -0.7)
    let m = scalar_model([0.9, 0.1, 1.0, 0.2, 1.7, 0.05, 0.5, 0.7, 0.4]);
    let (loss, g) = backward(&m, &[scalar_sample()]).unwrap();
    assert!((loss - 0.44).abs() < 1e-12);
    let expected = [0.4, -0.4, 0.56, -0.7, 0.0, 0.0, 0.0, 0.6, 0.8];
    for (a, e) in g.to_flat().iter().zip(expected) {
        assert!((a - e).abs() < 1e-12, "{:?}", g.to_flat());
    }

    // e_c = 2.0: pre = 1.0 > z + 2g so y = pre - 2g = 0.9, H^ = 0.78
    //   dy = 0.4 -> e_c: 0.4 * L~ = 0.2, g_c: -0.8, dL~ = 0.8
    //   proj_a: -0.8 * x = -0.48, dx = 0.7 - 0.5 * 0.8 = 0.3
    let m = scalar_model([0.9, 0.1, 1.0, 0.2, 2.0, 0.05, 0.5, 0.7, 0.4]);
    let (_, g) = backward(&m, &[scalar_sample()]).unwrap();
    let expected = [0.0, 0.0, 0.24, -0.3, 0.2, -0.8, -0.48, 0.6, 0.9];
    for (a, e) in g.to_flat().iter().zip(expected) {
        assert!((a - e).abs() < 1e-12, "{:?}", g.to_flat());
    }
}

#[test]
fn zero_everything_gives_zero_gradient() {
    let model = ScscPnnModel::zeros(cfg(1, 2, 3, 3, 2)).unwrap();
    let z = |c| Tensor::zeros(&[c, 6, 6]);
    let sample = SamplePair::new(z(2), z(2), z(1)).unwrap();
    let (loss, g) = backward(&model, &[sample]).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.to_flat().iter().all(|&v| v == 0.0));
}

#[test]
fn small_model_passes_gradient_check() {
    let model = init_params(cfg(1, 2, 3, 3, 1), 21).unwrap();
    let batch = synth_dataset(&SynthConfig {
        count: 1,
        ms_bands: 2,
        size: 8,
        ratio: 2,
        seed: 21,
        ..SynthConfig::default()
    })
    .unwrap();
    // some gradients here are ~1e-6, where a 1e-6 step is round-off bound
    let options = GradCheckOptions {
        step: 1e-5,
        ..GradCheckOptions::default()
    };
    let report = gradient_check(&model, &batch, &options).unwrap();
    assert!(report.checked > 0);
    assert!(report.max_rel_error < 1e-4, "{:?}", report);
}
