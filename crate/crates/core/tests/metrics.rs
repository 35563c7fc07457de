use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scsc_core::metrics::{ergas, evaluate, psnr, sam, ssim};
use scsc_core::Tensor;

fn random(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

#[test]
fn psnr_and_ergas_match_loop_oracles() {
    let (x, r) = (random(1, &[3, 9, 7]), random(2, &[3, 9, 7]));
    let mut se = 0.0;
    for i in 0..x.len() {
        se += (x.data()[i] - r.data()[i]).powi(2);
    }
    let expected = 10.0 * (1.0 / (se / x.len() as f64)).log10();
    assert!((psnr(&x, &r).unwrap() - expected).abs() < 1e-10);

    let mut acc = 0.0;
    for b in 0..3 {
        let (mut se, mut sum) = (0.0, 0.0);
        for i in 0..63 {
            se += (x.data()[b * 63 + i] - r.data()[b * 63 + i]).powi(2);
            sum += r.data()[b * 63 + i];
        }
        acc += (se / 63.0) / (sum / 63.0).powi(2);
    }
    let expected = 100.0 / 4.0 * (acc / 3.0).sqrt();
    assert!((ergas(&x, &r, 4).unwrap() - expected).abs() < 1e-10);
}

#[test]
fn sam_matches_arccos_definition() {
    let (x, r) = (random(3, &[4, 6, 6]), random(4, &[4, 6, 6]));
    let mut total = 0.0;
    for i in 0..36 {
        let (mut d, mut nx, mut nr) = (0.0, 0.0, 0.0);
        for b in 0..4 {
            let (u, v) = (x.data()[b * 36 + i], r.data()[b * 36 + i]);
            d += u * v;
            nx += u * u;
            nr += v * v;
        }
        total += (d / (nx * nr).sqrt()).acos();
    }
    assert!((sam(&x, &r).unwrap() - total / 36.0).abs() < 1e-10);
    assert!((sam(&x, &r).unwrap() - sam(&r, &x).unwrap()).abs() < 1e-15);
}

#[test]
fn sam_skips_zero_pixels() {
    let mut x = random(5, &[2, 2, 2]);
    let r = random(6, &[2, 2, 2]);
    for b in 0..2 {
        x.data_mut()[b * 4] = 0.0;
    }
    let mut keep_x = Vec::new();
    let mut keep_r = Vec::new();
    for b in 0..2 {
        keep_x.extend_from_slice(&x.channel(b)[1..]);
        keep_r.extend_from_slice(&r.channel(b)[1..]);
    }
    let kx = Tensor::new(&[2, 1, 3], keep_x).unwrap();
    let kr = Tensor::new(&[2, 1, 3], keep_r).unwrap();
    assert!((sam(&x, &r).unwrap() - sam(&kx, &kr).unwrap()).abs() < 1e-15);
}

#[test]
fn ssim_on_tiny_image_is_one_uniform_window() {
    let (x, r) = (random(7, &[1, 5, 5]), random(8, &[1, 5, 5]));
    let n = 25.0;
    let (a, b) = (x.data(), r.data());
    let mx = a.iter().sum::<f64>() / n;
    let my = b.iter().sum::<f64>() / n;
    let vx = a.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
    let vy = b.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let cxy = a.iter().zip(b).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let expected = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    assert!((ssim(&x, &r).unwrap() - expected).abs() < 1e-10);
}

#[test]
fn psnr_decreases_along_noise_ladder() {
    let r = random(9, &[3, 16, 16]);
    let noise = random(10, &[3, 16, 16]).map(|v| v - 0.5);
    let mut prev = f64::INFINITY;
    for amp in [0.001, 0.01, 0.03, 0.1, 0.3] {
        let p = psnr(&r.add(&noise.scale(amp)).unwrap(), &r).unwrap();
        assert!(p < prev);
        prev = p;
    }
}

#[test]
fn evaluate_bundles_all_metrics() {
    let r = random(11, &[2, 12, 12]).map(|v| v + 0.1);
    let m = evaluate(&r, &r, 4).unwrap();
    assert_eq!((m.psnr, m.sam, m.ergas), (f64::INFINITY, 0.0, 0.0));
    assert!((m.ssim - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_stays_in_range(seed in any::<u64>(), h in 3usize..16, w in 3usize..16) {
        let x = random(seed, &[2, h, w]);
        let r = random(seed.wrapping_add(1), &[2, h, w]);
        let v = ssim(&x, &r).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v));
        let inv = r.map(|v| 1.0 - v);
        prop_assert!((-1.0..=1.0).contains(&ssim(&inv, &r).unwrap()));
    }
}
