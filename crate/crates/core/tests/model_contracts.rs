use alae_core::faces::SyntheticDataset;
use alae_core::image::ImageTensor;
use alae_core::metrics::ssim;
use alae_core::model::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, train_toy, ArchConfig,
    GenerativeAutoencoder, TrainConfig,
};
use alae_core::nn::Parameters;
use alae_core::{CheckpointError, Error};

fn tiny() -> GenerativeAutoencoder<f32> {
    GenerativeAutoencoder::new(ArchConfig::tiny16(), 5).unwrap().eval()
}

#[test]
fn distinct_prior_samples_decode_differently() {
    let m = GenerativeAutoencoder::<f32>::new(ArchConfig::with_size(32), 2).unwrap().eval();
    for s in 0..20 {
        let a = m.decode(&m.sample_prior(2 * s)).unwrap();
        let b = m.decode(&m.sample_prior(2 * s + 1)).unwrap();
        assert!(ssim(&a, &b).unwrap() < 1.0);
    }
}

#[test]
fn prior_mean_matches_mapped_zero_noise_scale() {
    let m = tiny();
    let n = 10_000;
    let d = m.d_w();
    let mut sum = vec![0.0f64; d];
    let mut sq = vec![0.0f64; d];
    for s in 0..n {
        for (i, v) in m.sample_prior(s as u64).to_f64_vec().into_iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    // Reference mean from an independent, larger Monte-Carlo batch.
    let mut reference = vec![0.0f64; d];
    let m2 = 40_000;
    for s in 0..m2 {
        for (i, v) in m.sample_prior(1_000_000 + s as u64).to_f64_vec().into_iter().enumerate() {
            reference[i] += v / m2 as f64;
        }
    }
    for i in 0..d {
        let mean = sum[i] / n as f64;
        let std = (sq[i] / n as f64 - mean * mean).sqrt();
        assert!((mean - reference[i]).abs() <= 3.0 * std / 100.0 * 1.25, "coord {i}");
    }
}

#[test]
fn eval_inference_is_pure_over_many_calls() {
    let m = tiny();
    let before = m.weight_hash();
    let img = ImageTensor::<f32>::constant(16, 16, 0.25);
    let w0 = m.encode(&img).unwrap();
    for s in 0..1000 {
        let w = m.encode(&img).unwrap();
        assert!(w.bit_eq(&w0));
        let out = m.decode(&m.sample_prior(s)).unwrap();
        assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_eq!(before, m.weight_hash());
}

#[test]
fn checkpoint_round_trip_and_corruptions() {
    let m = tiny();
    let bytes = encode_checkpoint(&m).unwrap();
    let back: GenerativeAutoencoder<f32> = decode_checkpoint(&bytes).unwrap();
    for ((na, ta), (nb, tb)) in m.named_params().into_iter().zip(back.named_params()) {
        assert_eq!(na, nb);
        assert_eq!(ta.shape, tb.shape);
        assert!(ta.data.iter().zip(&tb.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        decode_checkpoint::<f32>(&bad),
        Err(Error::Checkpoint(CheckpointError::BadMagic))
    ));
    let cut = &bytes[..bytes.len() - 3];
    assert!(matches!(
        decode_checkpoint::<f32>(cut),
        Err(Error::Checkpoint(CheckpointError::Truncated { .. }))
    ));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    save_checkpoint(&m, &p).unwrap();
    let loaded: GenerativeAutoencoder<f32> = load_checkpoint(&p).unwrap();
    assert_eq!(loaded.weight_hash(), m.weight_hash());
}

#[test]
fn training_is_reproducible_and_learns() {
    let ds = SyntheticDataset::<f32>::generate(4, 48, 16).unwrap();
    let cfg = TrainConfig {
        arch: ArchConfig::tiny16(),
        epochs: 3,
        warmup_epochs: 2,
        batch_size: 8,
        ..Default::default()
    };
    let a = train_toy(&ds, &cfg, 1).unwrap();
    let b = train_toy(&ds, &cfg, 1).unwrap();
    assert_eq!(a.model.weight_hash(), b.model.weight_hash());
    let la = a.history.last().unwrap().total;
    let lb = b.history.last().unwrap().total;
    assert!((la - lb).abs() <= 1e-4 * la.abs());
    assert!(a.history[0].pixel_mse > a.history[1].pixel_mse);
    assert_eq!(a.history.len(), 3);
}

#[test]
fn training_rejects_bad_inputs() {
    let ds = SyntheticDataset::<f32>::generate(4, 4, 32).unwrap();
    let cfg = TrainConfig {
        arch: ArchConfig::tiny16(),
        ..Default::default()
    };
    assert!(matches!(train_toy(&ds, &cfg, 0), Err(Error::Validation(_))));
    let cfg = TrainConfig {
        arch: ArchConfig::with_size(32),
        epochs: 0,
        ..Default::default()
    };
    assert!(train_toy(&ds, &cfg, 0).is_err());
}
