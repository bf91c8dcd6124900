use alae_core::adaptation::{
    mse, perceptual_loss, smooth_l1, smooth_l1_grad, total_loss, LossTarget, PerceptualExtractor,
};
use alae_core::image::ImageTensor;
use alae_core::model::{ArchConfig, GenerativeAutoencoder};
use alae_core::nn::Parameters;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, size: usize) -> ImageTensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(size, size, |_, _, _| rng.random::<f64>())
}

#[test]
fn total_loss_decomposes() {
    let e = PerceptualExtractor::<f64>::new(3);
    for (i, (lm, lv)) in [(1.0, 1.0), (0.3, 2.0), (0.0, 1.5), (2.0, 0.0)].into_iter().enumerate() {
        let a = random_image(i as u64, 32);
        let b = random_image(100 + i as u64, 32);
        let t = total_loss(&a, &b, &e, lm, lv).unwrap();
        let parts = lm * mse(&a, &b).unwrap() + lv * perceptual_loss(&e, &b, &a).unwrap();
        assert!((t - parts).abs() <= 1e-9 * parts.abs().max(1e-300), "{t} vs {parts}");
    }
}

#[test]
fn vgg_only_equals_scaled_perceptual() {
    let e = PerceptualExtractor::<f64>::new(3);
    let a = random_image(1, 16);
    let b = random_image(2, 16);
    let t = total_loss(&a, &b, &e, 0.0, 2.0).unwrap();
    assert!((t - 2.0 * perceptual_loss(&e, &b, &a).unwrap()).abs() < 1e-12);
}

#[test]
fn smooth_l1_branches_and_continuity() {
    assert_eq!(smooth_l1(0.5), 0.125);
    assert_eq!(smooth_l1(2.0), 1.5);
    for k in 1..=100 {
        let eps = k as f64 * 1e-9;
        let (lo, hi) = (1.0 - eps, 1.0 + eps);
        assert!((smooth_l1(lo) - 0.5).abs() <= 1.01 * eps);
        assert!((smooth_l1(hi) - 0.5).abs() <= 1.01 * eps);
        assert!((smooth_l1_grad(lo) - 1.0).abs() <= 1.01 * eps);
        assert!((smooth_l1_grad(hi) - 1.0).abs() <= 1.01 * eps);
    }
}

#[test]
fn perceptual_loss_is_nonnegative_and_symmetric() {
    let e = PerceptualExtractor::<f64>::new(0);
    for s in 0..5 {
        let a = random_image(s, 16);
        let b = random_image(s + 50, 16);
        let l = perceptual_loss(&e, &a, &b).unwrap();
        assert!(l > 0.0);
        assert!((l - perceptual_loss(&e, &b, &a).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn decoder_weight_gradients_match_finite_differences() {
    let model = GenerativeAutoencoder::<f64>::new(ArchConfig::tiny16(), 21).unwrap().eval();
    let e = PerceptualExtractor::<f64>::new(4);
    let target_img = random_image(9, 16);
    let target = LossTarget::new(&e, &target_img, 1.0, 1.0).unwrap();
    let w = model.sample_prior(5);

    let mut grads = model.decoder.clone();
    grads.zero_();
    target.decoder_step(&model.decoder, w.values(), Some(&mut grads), false);
    let analytic: Vec<(String, Vec<f64>)> = grads
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.data.clone()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-5;
    let mut checked = 0;
    for (ti, (name, g)) in analytic.iter().enumerate() {
        for _ in 0..6 {
            let i = rng.random_range(0..g.len());
            let eval = |delta: f64| {
                let mut d = model.decoder.clone();
                d.named_params_mut()[ti].1.data[i] += delta;
                target.decoder_step(&d, w.values(), None, false).0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (fd - g[i]).abs();
            assert!(
                err <= 1e-3 * fd.abs().max(g[i].abs()) + 1e-8,
                "{name}[{i}]: analytic {} vs finite difference {fd}",
                g[i]
            );
            checked += 1;
        }
    }
    assert!(checked >= 60);
}
