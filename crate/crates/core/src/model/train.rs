//! Toy training loop for the style-based autoencoder.
//!
//! Objective per minibatch:
//! - non-saturating adversarial loss between real images and `D(F(z))`,
//! - latent reciprocity `||E(D(F(z))) - F(z)||^2` (updates encoder and decoder),
//! - pixel reconstruction `||x - D(E(x))||^2`, full weight during warm-up and
//!   `pixel_weight` afterwards.

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{prior_noise, ArchConfig, GenerativeAutoencoder, ModelMode};
use crate::error::{invalid, Error, Result};
use crate::faces::SyntheticDataset;
use crate::nn::{logistic, softplus, Adam, AdamConfig, FeatureMap, Parameters};
use crate::scalar::{lit, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub disc_lr: f64,
    /// Epochs trained on pixel reconstruction + reciprocity before the
    /// adversarial term switches on.
    pub warmup_epochs: usize,
    pub adversarial_weight: f64,
    pub reciprocity_weight: f64,
    /// Pixel reconstruction weight after warm-up.
    pub pixel_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig::toy64(),
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            disc_lr: 5e-4,
            warmup_epochs: 5,
            adversarial_weight: 0.05,
            reciprocity_weight: 1.0,
            pixel_weight: 1.0,
        }
    }
}

/// Mean per-sample losses over one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub discriminator: f64,
    pub adversarial: f64,
    pub reciprocity: f64,
    pub pixel_mse: f64,
    /// Weighted generator-side objective actually optimized this epoch.
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: GenerativeAutoencoder<T>,
    pub history: Vec<EpochLosses>,
}

fn check_finite(v: f64, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence { step, loss: v })
    }
}

/// Trains the toy model from scratch. Single-threaded and fully determined by
/// `seed`, the dataset and the config.
pub fn train_toy<T: Scalar>(
    dataset: &SyntheticDataset<T>,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    if dataset.is_empty() {
        return Err(invalid("training dataset is empty"));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(invalid("epochs and batch_size must be at least 1"));
    }
    let size = config.arch.image_size;
    if dataset.images.iter().any(|im| im.height() != size || im.width() != size) {
        return Err(invalid(format!("dataset images must be {size}x{size}")));
    }

    let mut model = GenerativeAutoencoder::<T>::new(config.arch.clone(), seed)?;
    model.metadata.dataset = dataset.descriptor();
    let d_w = config.arch.d_w;

    let gen_cfg = AdamConfig {
        lr: config.lr,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
    let disc_cfg = AdamConfig {
        lr: config.disc_lr,
        ..gen_cfg
    };
    let mut opt_e = Adam::new(gen_cfg, &model.encoder);
    let mut opt_g = Adam::new(gen_cfg, &model.decoder);
    let mut opt_f = Adam::new(gen_cfg, &model.mapping);
    let mut opt_d = Adam::new(disc_cfg, &model.discriminator);

    let mut g_e = model.encoder.clone();
    let mut g_g = model.decoder.clone();
    let mut g_f = model.mapping.clone();
    let mut g_d = model.discriminator.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    let n_pix = lit::<T>((3 * size * size) as f64);
    let n_w = lit::<T>(d_w as f64);
    let two = lit::<T>(2.0);

    for epoch in 0..config.epochs {
        let warm = epoch < config.warmup_epochs;
        let adv_w = if warm { 0.0 } else { config.adversarial_weight };
        let pix_w = if warm { 1.0 } else { config.pixel_weight };
        let rec_w = config.reciprocity_weight;
        order.shuffle(&mut rng);
        let mut sums = EpochLosses {
            epoch,
            ..Default::default()
        };
        for batch in order.chunks(config.batch_size) {
            g_e.zero_();
            g_g.zero_();
            g_f.zero_();
            g_d.zero_();
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let x = dataset.images[idx].to_feature_map();

                // Pixel reconstruction through E then D.
                let (w_e, e_trace) = model.encoder.forward(&x);
                let d_trace = model.decoder.forward(&w_e);
                let mut d_img = FeatureMap::zeros(3, size, size);
                let mut mse = T::zero();
                for ((g, &y), &t) in d_img.data.iter_mut().zip(&d_trace.output.data).zip(&x.data) {
                    let diff = y - t;
                    mse += diff * diff;
                    *g = two * diff / n_pix * lit::<T>(pix_w * scale);
                }
                let mse = (mse / n_pix).to_f64().unwrap();
                sums.pixel_mse += mse;
                sums.total += pix_w * mse;
                if pix_w > 0.0 {
                    let dw = model.decoder.backward(&d_trace, &d_img, Some(&mut g_g), true).unwrap();
                    model.encoder.backward(&e_trace, &dw, Some(&mut g_e), false);
                }

                // Prior sample through the generator.
                let z = prior_noise::<T>(d_w, rng.random());
                let (w_f, f_trace) = model.mapping.forward(&z);
                let fake_trace = model.decoder.forward(&w_f);
                let mut d_fake = FeatureMap::zeros(3, size, size);

                if adv_w > 0.0 {
                    // Discriminator on the real image.
                    let (lr, r_trace) = model.discriminator.forward(&x);
                    let lr = lr[0];
                    sums.discriminator += softplus(-lr).to_f64().unwrap();
                    let up = (logistic(lr) - T::one()) * lit(scale);
                    model.discriminator.backward(&r_trace, &[up], Some(&mut g_d), false);

                    // Discriminator and generator on the fake.
                    let (lf, f_dtrace) = model.discriminator.forward(&fake_trace.output);
                    let lf = lf[0];
                    sums.discriminator += softplus(lf).to_f64().unwrap();
                    let g_adv = softplus(-lf).to_f64().unwrap();
                    sums.adversarial += g_adv;
                    sums.total += adv_w * g_adv;
                    let up_d = logistic(lf) * lit(scale);
                    let up_g = (logistic(lf) - T::one()) * lit(scale * adv_w);
                    let dx = model
                        .discriminator
                        .backward(&f_dtrace, &[up_d], Some(&mut g_d), true)
                        .unwrap();
                    let ratio = if up_d.abs() > lit(1e-12) {
                        Some(up_g / up_d)
                    } else {
                        None
                    };
                    let dx = match ratio {
                        Some(r) => FeatureMap::from_vec(3, size, size, dx.data.iter().map(|&v| v * r).collect()),
                        None => model.discriminator.backward(&f_dtrace, &[up_g], None, true).unwrap(),
                    };
                    d_fake.data.iter_mut().zip(&dx.data).for_each(|(a, &v)| *a += v);
                }

                // Latent reciprocity: E(D(w)) should return w.
                let (w_r, r_trace) = model.encoder.forward(&fake_trace.output);
                let mut dw_r = vec![T::zero(); d_w];
                let mut rec = T::zero();
                for ((g, &a), &b) in dw_r.iter_mut().zip(&w_r).zip(&w_f) {
                    let diff = a - b;
                    rec += diff * diff;
                    *g = two * diff / n_w * lit::<T>(rec_w * scale);
                }
                let rec = (rec / n_w).to_f64().unwrap();
                sums.reciprocity += rec;
                sums.total += rec_w * rec;
                if rec_w > 0.0 {
                    let dx = model.encoder.backward(&r_trace, &dw_r, Some(&mut g_e), true).unwrap();
                    d_fake.data.iter_mut().zip(&dx.data).for_each(|(a, &v)| *a += v);
                }

                if rec_w > 0.0 || adv_w > 0.0 {
                    let dw = model.decoder.backward(&fake_trace, &d_fake, Some(&mut g_g), adv_w > 0.0);
                    if let Some(dw) = dw {
                        model.mapping.backward(&f_trace, &dw, &mut g_f);
                    }
                }
            }
            step += 1;
            check_finite(sums.total, step)?;
            opt_e.step(&mut model.encoder, &g_e);
            opt_g.step(&mut model.decoder, &g_g);
            if adv_w > 0.0 {
                opt_f.step(&mut model.mapping, &g_f);
                opt_d.step(&mut model.discriminator, &g_d);
            }
        }
        let n = dataset.len() as f64;
        let mean = EpochLosses {
            epoch,
            discriminator: sums.discriminator / n,
            adversarial: sums.adversarial / n,
            reciprocity: sums.reciprocity / n,
            pixel_mse: sums.pixel_mse / n,
            total: sums.total / n,
        };
        info!(
            "epoch {epoch}: total {:.5} pixel_mse {:.5} reciprocity {:.5} adv {:.4} disc {:.4}",
            mean.total, mean.pixel_mse, mean.reciprocity, mean.adversarial, mean.discriminator
        );
        history.push(mean);
    }
    model.mode = ModelMode::Eval;
    Ok(TrainOutcome { model, history })
}
