use alae_core::faces::{measure_factors, render, sample_factors, FaceFactors};
use alae_core::image::ImageTensor;
use alae_core::metrics::factor_scores;

fn errors(f: &FaceFactors, m: &FaceFactors) -> [f64; 6] {
    [
        (m.identity_hue - f.identity_hue).abs(),
        (m.identity_aspect - f.identity_aspect).abs(),
        (m.identity_eye_spacing - f.identity_eye_spacing).abs(),
        (m.age - f.age).abs(),
        (m.smile - f.smile).abs(),
        (m.hair - f.hair).abs(),
    ]
}

#[test]
fn closed_loop_recovery_at_64() {
    let mut worst = [0.0f64; 6];
    for f in sample_factors(31, 1000) {
        let e = errors(&f, &measure_factors(&render::<f32>(&f, 64)));
        for i in 0..6 {
            worst[i] = worst[i].max(e[i]);
        }
    }
    assert!(worst.iter().all(|&e| e <= 0.05), "{worst:?}");
}

#[test]
fn closed_loop_recovery_at_32() {
    let mut worst = [0.0f64; 6];
    for f in sample_factors(32, 300) {
        let e = errors(&f, &measure_factors(&render::<f32>(&f, 32)));
        for i in 0..6 {
            worst[i] = worst[i].max(e[i]);
        }
    }
    // Smile is read from a sub-pixel mouth stroke, so it is coarser at 32.
    let tol = [0.05, 0.05, 0.05, 0.05, 0.12, 0.05];
    for i in 0..6 {
        assert!(worst[i] <= tol[i], "{worst:?}");
    }
}

#[test]
fn measuring_is_total_and_deterministic() {
    let gray = ImageTensor::<f64>::constant(64, 64, 0.5);
    let m = measure_factors(&gray);
    for v in [m.identity_hue, m.identity_aspect, m.identity_eye_spacing, m.age, m.smile, m.hair] {
        assert!(v.is_finite());
    }
    let f = sample_factors(3, 1)[0];
    let img = render::<f64>(&f, 64);
    assert_eq!(measure_factors(&img), measure_factors(&img));
}

#[test]
fn factor_scores_on_smile_flip() {
    for mut f in sample_factors(5, 20) {
        f.smile = 0.8;
        let a = render::<f64>(&f, 64);
        f.smile = -0.6;
        let b = render::<f64>(&f, 64);
        let s = factor_scores(&a, &b).unwrap();
        assert!((s.attribute_errors["smile"] - 1.4).abs() <= 0.1);
        assert!(s.identity_error <= 0.05);
        assert_eq!(s, factor_scores(&b, &a).unwrap());
        assert_eq!(factor_scores(&a, &a).unwrap().identity_error, 0.0);
    }
}

#[test]
fn age_changes_only_the_forehead() {
    let mut f = sample_factors(6, 1)[0];
    f.age = 0.0;
    let a = render::<f64>(&f, 64);
    f.age = 1.0;
    let b = render::<f64>(&f, 64);
    for y in 0..64 {
        for x in 0..64 {
            let v = (y as f64 + 0.5) / 64.0;
            if !(0.30..0.42).contains(&v) {
                assert_eq!(a.rgb(y, x), b.rgb(y, x), "({y},{x})");
            }
        }
    }
}
