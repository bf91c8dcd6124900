use alae_core::editing::{edit_latent, fit_direction, AttributeDirection};
use alae_core::latent::LatentCode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_case(rng: &mut ChaCha8Rng, d: usize) -> (LatentCode<f64>, AttributeDirection, f64) {
    let w: Vec<f64> = (0..d).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let n: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let alpha = rng.random_range(-5.0..5.0);
    (
        LatentCode::new(w).unwrap(),
        AttributeDirection::new("t", n, 0.0).unwrap(),
        alpha,
    )
}

#[test]
fn edit_algebra_over_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let d = [2, 8, 128][case % 3];
        let (w, dir, alpha) = random_case(&mut rng, d);
        assert!((dot(&dir.normal, &dir.normal).sqrt() - 1.0).abs() < 1e-12);

        assert!(edit_latent(&w, &dir, 0.0).unwrap().bit_eq(&w));

        let beta = rng.random_range(-5.0..5.0);
        let two = edit_latent(&edit_latent(&w, &dir, alpha).unwrap(), &dir, beta).unwrap();
        let one = edit_latent(&w, &dir, alpha + beta).unwrap();
        for (a, b) in two.values().iter().zip(one.values()) {
            assert!((a - b).abs() < 1e-6);
        }

        let e = edit_latent(&w, &dir, alpha).unwrap();
        let delta: Vec<f64> = e.values().iter().zip(w.values()).map(|(a, b)| a - b).collect();
        let along = dot(&delta, &dir.normal);
        assert!((along - alpha).abs() < 1e-6, "case {case}: {along} vs {alpha}");
        let orth: Vec<f64> = delta.iter().zip(&dir.normal).map(|(x, n)| x - along * n).collect();
        assert!(dot(&orth, &orth).sqrt() < 1e-6);
    }
}

#[test]
fn edit_leaves_input_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, dir, alpha) = random_case(&mut rng, 16);
    let copy = w.clone();
    let _ = edit_latent(&w, &dir, alpha).unwrap();
    assert!(w.bit_eq(&copy));
}

fn separable(rng: &mut ChaCha8Rng, d: usize, n: usize) -> (Vec<Vec<f64>>, Vec<bool>, Vec<f64>) {
    let truth: Vec<f64> = {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let s = dot(&v, &v).sqrt();
        v.into_iter().map(|x| x / s).collect()
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    while xs.len() < n {
        let x: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let s = dot(&x, &truth);
        if s.abs() < 0.2 {
            continue;
        }
        ys.push(s > 0.0);
        xs.push(x);
    }
    (xs, ys, truth)
}

#[test]
fn fit_recovers_orientation_and_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (xs, ys, truth) = separable(&mut rng, 6, 300);
    let lat: Vec<LatentCode<f64>> = xs.iter().map(|x| LatentCode::new(x.clone()).unwrap()).collect();
    let dir = fit_direction(&lat, &ys, "t").unwrap();
    assert!(dot(&dir.normal, &truth) > 0.95);
    assert!(dir.train_accuracy > 0.98);
    for scale in [0.01, 3.0, 250.0] {
        let scaled: Vec<LatentCode<f64>> = xs
            .iter()
            .map(|x| LatentCode::new(x.iter().map(|v| v * scale).collect()).unwrap())
            .collect();
        let d2 = fit_direction(&scaled, &ys, "t").unwrap();
        assert!(dot(&d2.normal, &dir.normal) > 0.99, "scale {scale}");
    }
}

#[test]
fn fit_rejects_degenerate_inputs() {
    let lat: Vec<LatentCode<f64>> = (0..6).map(|i| LatentCode::new(vec![i as f64, 1.0]).unwrap()).collect();
    assert!(fit_direction(&lat, &[true; 6], "t").is_err());
    assert!(fit_direction(&lat, &[true, false, false, false, false, false], "t").is_err());
    assert!(fit_direction(&lat[..3], &[true, false, true, false], "t").is_err());
}
