use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scsc_core::data::{synth_dataset, wald_degrade, SynthConfig};
use scsc_core::network::{init_params, ParamKind};
use scsc_core::train::{adam_step, adam_update, l1_loss, train, AdamConfig, AdamState, TrainConfig};
use scsc_core::{ModelConfig, ScscPnnModel, Tensor};

fn small() -> ModelConfig {
    ModelConfig {
        pan_bands: 1,
        ms_bands: 2,
        filters: 3,
        kernel_size: 3,
        blocks: 1,
    }
}

fn data(count: usize, seed: u64) -> Vec<scsc_core::data::SamplePair> {
    synth_dataset(&SynthConfig {
        count,
        ms_bands: 2,
        size: 8,
        ratio: 2,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn l1_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Tensor::from_fn(&[3, 5, 4], |_| rng.gen_range(0.0..1.0));
    let b = Tensor::from_fn(&[3, 5, 4], |_| rng.gen_range(0.0..1.0));
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += (a.data()[i] - b.data()[i]).abs();
    }
    assert!((l1_loss(&a, &b).unwrap() - acc / 60.0).abs() < 1e-12);
}

#[test]
fn adam_three_step_scalar_trace() {
    // f(p) = p^2 / 2 from p = 1, lr 0.1
    let expected = [
        (0.900000001, 0.09999999999999998, 0.0010000000000000009),
        (0.8004122297123382, 0.18000000009999995, 0.0018090000018000018),
        (0.701586274504415, 0.24204122306123377, 0.0024478507392712793),
    ];
    let mut p = [1.0];
    let mut state = AdamState::new(1);
    for (pe, me, ve) in expected {
        let g = [p[0]];
        adam_update(&mut p, &g, &mut state, 0.1, &AdamConfig::default()).unwrap();
        assert!((p[0] - pe).abs() < 1e-12);
        assert!((state.m[0] - me).abs() < 1e-12);
        assert!((state.v[0] - ve).abs() < 1e-12);
    }
    assert_eq!(state.t, 3);
}

#[test]
fn adam_step_keeps_thresholds_nonnegative() {
    let mut model = init_params(small(), 0).unwrap();
    let mut grads = ScscPnnModel::zeros(small()).unwrap();
    grads.visit_params_mut(|_, kind, v| {
        if kind == ParamKind::Threshold {
            v.fill(1.0);
        }
    });
    let mut state = AdamState::new(model.param_count());
    adam_step(&mut model, &grads, &mut state, 1.0, &AdamConfig::default()).unwrap();
    let mut min = f64::INFINITY;
    model.visit_params(|_, kind, v| {
        if kind == ParamKind::Threshold {
            min = v.iter().cloned().fold(min, f64::min);
        }
    });
    assert_eq!(min, 0.0);
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let set = data(3, 1);
    let init = init_params(small(), 2).unwrap();
    let mut model = init.clone();
    let cfg = TrainConfig {
        epochs: 4,
        learning_rate: 0.0,
        batch_size: 2,
        ratio: 2,
        patch_size: 8,
        ..TrainConfig::default()
    };
    let trace = train(&mut model, &set, &cfg).unwrap();
    assert_eq!(model, init);
    assert_eq!(trace.len(), 4);
    assert!(trace.iter().all(|&l| l == trace[0]));
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let set = data(4, 3);
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 2e-3,
        batch_size: 2,
        seed: 5,
        ratio: 2,
        patch_size: 8,
        ..TrainConfig::default()
    };
    let mut a = init_params(small(), 4).unwrap();
    let mut b = init_params(small(), 4).unwrap();
    let ta = train(&mut a, &set, &cfg).unwrap();
    let tb = train(&mut b, &set, &cfg).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(a, b);
    assert!(ta.last().unwrap() < &ta[0]);
}

#[test]
fn failures_are_reported() {
    let mut model = init_params(small(), 0).unwrap();
    assert!(train(&mut model, &[], &TrainConfig::default()).is_err());
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 1e300,
        ratio: 2,
        patch_size: 8,
        ..TrainConfig::default()
    };
    let err = train(&mut model, &data(2, 0), &cfg).unwrap_err();
    assert!(err.is_numeric(), "{:?}", err);
}

#[test]
fn wald_degradation_preserves_means() {
    let (m, period) = (32, 8.0);
    let two_pi = std::f64::consts::TAU;
    let h = Tensor::from_fn(&[1, m, m], |idx| {
        let (i, j) = ((idx / m) as f64, (idx % m) as f64);
        0.5 + 0.2 * (two_pi * i / period).cos() * (two_pi * j / period).cos() + 0.1 * (two_pi * (i + j) / period).sin()
    });
    let (up, low) = wald_degrade(&h, 2, 1.0).unwrap();
    assert_eq!(low.shape(), &[1, 16, 16]);
    assert_eq!(up.shape(), &[1, 32, 32]);
    // reflective borders break periodicity, so only approximately
    assert!((low.mean() - h.mean()).abs() < 1e-3, "{} vs {}", low.mean(), h.mean());
    assert!((up.mean() - h.mean()).abs() < 1e-3);

    let flat = Tensor::full(&[2, 16, 16], 0.37);
    let (up, low) = wald_degrade(&flat, 4, 2.0).unwrap();
    assert!(low.sub(&Tensor::full(&[2, 4, 4], 0.37)).unwrap().max_abs() < 1e-12);
    assert!(up.sub(&flat).unwrap().max_abs() < 1e-12);
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn synthetic_pan_correlates_with_every_band() {
    for s in synth_dataset(&SynthConfig::default()).unwrap() {
        for band in 0..4 {
            assert!(correlation(s.pan.channel(0), s.h.channel(band)) > 0.5);
        }
    }
}
