//! One-shot decoder fine-tuning toward a single image with the latent held
//! fixed, under a weighted pixel-MSE + perceptual objective.
//!
//! The perceptual term sums a smooth-L1 penalty over four feature taps:
//! `z_j = 0.5 r_j^2` if `r_j < 1`, else `r_j - 0.5`, where `r_j` is the L2
//! norm of the feature difference at tap `j` divided by `sqrt(element count)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::ImageTensor;
use crate::impl_parameters;
use crate::latent::LatentCode;
use crate::model::{weight_hash, Decoder, GenerativeAutoencoder};
use crate::nn::{
    avg_pool2, avg_pool2_backward, relu, relu_backward, Adam, AdamConfig, Conv2d, ConvCache,
    FeatureMap, Parameters,
};
use crate::scalar::{lit, Scalar};

/// A frozen feature network exposing four tap points.
///
/// The default [`PerceptualExtractor`] is a seeded random convolution stack;
/// a pretrained network can be plugged in by implementing this trait.
pub trait FeatureExtractor<T: Scalar>: Send + Sync {
    type Trace;

    /// Features at each tap for a planar `3 x h x w` image in `[0, 1]`.
    fn extract(&self, image: &FeatureMap<T>) -> (Vec<FeatureMap<T>>, Self::Trace);

    /// Gradient w.r.t. the input image given gradients at every tap.
    fn backward_input(&self, trace: &Self::Trace, d_taps: &[FeatureMap<T>]) -> FeatureMap<T>;

    /// Stable hash of the frozen weights.
    fn fingerprint(&self) -> String;
}

/// Eight 3x3 conv + ReLU layers with 2x pooling after layers 2, 4 and 6;
/// taps after layers 1, 2, 5 and 7 (shallow-to-mid, like VGG-16's conv1_1,
/// conv1_2, conv3_2 and conv4_2).
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualExtractor<T> {
    pub convs: Vec<Conv2d<T>>,
    pub seed: u64,
}

impl_parameters!(PerceptualExtractor { convs });

pub const EXTRACTOR_CHANNELS: [usize; 8] = [8, 8, 16, 16, 32, 32, 32, 32];
/// Zero-based indices of tapped layers.
pub const TAP_LAYERS: [usize; 4] = [0, 1, 4, 6];
const POOL_AFTER: [usize; 3] = [1, 3, 5];

pub struct ExtractorTrace<T> {
    caches: Vec<ConvCache<T>>,
    outputs: Vec<FeatureMap<T>>,
}

impl<T: Scalar> PerceptualExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_c = 3;
        let convs = EXTRACTOR_CHANNELS
            .iter()
            .map(|&c| {
                let conv = Conv2d::new(in_c, c, 3, std::f64::consts::SQRT_2, &mut rng);
                in_c = c;
                conv
            })
            .collect();
        Self { convs, seed }
    }

    fn last_needed_layer() -> usize {
        *TAP_LAYERS.last().unwrap()
    }
}

impl<T: Scalar> FeatureExtractor<T> for PerceptualExtractor<T> {
    type Trace = ExtractorTrace<T>;

    fn extract(&self, image: &FeatureMap<T>) -> (Vec<FeatureMap<T>>, ExtractorTrace<T>) {
        // Inputs are recentred to [-1, 1].
        let mut cur = image.clone();
        cur.data.iter_mut().for_each(|v| *v = (*v - lit(0.5)) * lit(2.0));
        let mut caches = Vec::new();
        let mut outputs = Vec::new();
        let mut taps = Vec::with_capacity(TAP_LAYERS.len());
        for (i, conv) in self.convs.iter().enumerate().take(Self::last_needed_layer() + 1) {
            let (mut y, cache) = conv.forward(&cur);
            relu(&mut y.data);
            if TAP_LAYERS.contains(&i) {
                taps.push(y.clone());
            }
            cur = if POOL_AFTER.contains(&i) { avg_pool2(&y) } else { y.clone() };
            caches.push(cache);
            outputs.push(y);
        }
        (taps, ExtractorTrace { caches, outputs })
    }

    fn backward_input(&self, trace: &ExtractorTrace<T>, d_taps: &[FeatureMap<T>]) -> FeatureMap<T> {
        assert_eq!(d_taps.len(), TAP_LAYERS.len());
        let last = Self::last_needed_layer();
        let mut d: Option<FeatureMap<T>> = None;
        for i in (0..=last).rev() {
            // Gradient arriving at this layer's (post-ReLU) output.
            let mut g = match d.take() {
                Some(g) if POOL_AFTER.contains(&i) => avg_pool2_backward(&g),
                Some(g) => g,
                None => FeatureMap::zeros(trace.outputs[i].c, trace.outputs[i].h, trace.outputs[i].w),
            };
            if let Some(t) = TAP_LAYERS.iter().position(|&l| l == i) {
                g.data.iter_mut().zip(&d_taps[t].data).for_each(|(a, &b)| *a += b);
            }
            relu_backward(&trace.outputs[i].data, &mut g.data);
            d = self.convs[i].backward(&trace.caches[i], &g, None, true);
        }
        let mut dx = d.unwrap();
        dx.data.iter_mut().for_each(|v| *v = *v * lit(2.0));
        dx
    }

    fn fingerprint(&self) -> String {
        weight_hash(self)
    }
}

/// Smooth-L1 penalty on a normalized feature distance.
pub fn smooth_l1(r: f64) -> f64 {
    if r < 1.0 {
        0.5 * r * r
    } else {
        r - 0.5
    }
}

/// Derivative of [`smooth_l1`].
pub fn smooth_l1_grad(r: f64) -> f64 {
    if r < 1.0 {
        r
    } else {
        1.0
    }
}

/// Normalized tap distance `||a - b||_2 / sqrt(len)`.
pub fn normalized_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let ss: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).to_f64().unwrap().powi(2))
        .sum();
    (ss / a.len() as f64).sqrt()
}

fn perceptual_from_taps<T: Scalar>(fa: &[FeatureMap<T>], fb: &[FeatureMap<T>]) -> f64 {
    fa.iter()
        .zip(fb)
        .map(|(a, b)| smooth_l1(normalized_distance(&a.data, &b.data)))
        .sum()
}

/// Sum over taps of smooth-L1 normalized feature distances.
pub fn perceptual_loss<T: Scalar, E: FeatureExtractor<T>>(
    extractor: &E,
    img_a: &ImageTensor<T>,
    img_b: &ImageTensor<T>,
) -> Result<f64> {
    img_a.check_same_shape(img_b)?;
    let (fa, _) = extractor.extract(&img_a.to_feature_map());
    let (fb, _) = extractor.extract(&img_b.to_feature_map());
    Ok(perceptual_from_taps(&fa, &fb))
}

/// Mean squared pixel error.
pub fn mse<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.pixels().len() as f64;
    let sq = a.pixels().iter().zip(b.pixels()).map(|(&x, &y)| (x - y).to_f64().unwrap().powi(2));
    Ok(neumaier_sum(sq) / n)
}

/// Compensated summation.
fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + c
}

/// `lambda_mse * mse(image, recon) + lambda_vgg * perceptual_loss(recon, image)`.
pub fn total_loss<T: Scalar, E: FeatureExtractor<T>>(
    image: &ImageTensor<T>,
    recon: &ImageTensor<T>,
    extractor: &E,
    lambda_mse: f64,
    lambda_vgg: f64,
) -> Result<f64> {
    check_lambdas(lambda_mse, lambda_vgg)?;
    image.check_same_shape(recon)?;
    let mut loss = 0.0;
    if lambda_mse != 0.0 {
        loss += lambda_mse * mse(image, recon)?;
    }
    if lambda_vgg != 0.0 {
        loss += lambda_vgg * perceptual_loss(extractor, recon, image)?;
    }
    Ok(loss)
}

fn check_lambdas(lambda_mse: f64, lambda_vgg: f64) -> Result<()> {
    if !(lambda_mse >= 0.0 && lambda_vgg >= 0.0) {
        return Err(invalid("loss weights must be non-negative"));
    }
    Ok(())
}

/// A fixed target image with its features precomputed, for repeated
/// loss/gradient evaluation against changing reconstructions.
pub struct LossTarget<'e, T: Scalar, E: FeatureExtractor<T>> {
    extractor: &'e E,
    target: FeatureMap<T>,
    target_taps: Vec<FeatureMap<T>>,
    pub lambda_mse: f64,
    pub lambda_vgg: f64,
}

impl<'e, T: Scalar, E: FeatureExtractor<T>> LossTarget<'e, T, E> {
    pub fn new(extractor: &'e E, image: &ImageTensor<T>, lambda_mse: f64, lambda_vgg: f64) -> Result<Self> {
        check_lambdas(lambda_mse, lambda_vgg)?;
        let target = image.to_feature_map();
        let target_taps = if lambda_vgg != 0.0 {
            extractor.extract(&target).0
        } else {
            Vec::new()
        };
        Ok(Self {
            extractor,
            target,
            target_taps,
            lambda_mse,
            lambda_vgg,
        })
    }

    /// Loss and its gradient w.r.t. the planar reconstruction.
    pub fn loss_and_grad(&self, recon: &FeatureMap<T>) -> (f64, FeatureMap<T>) {
        assert!(recon.same_shape(&self.target), "reconstruction shape differs from target");
        let n = recon.data.len() as f64;
        let mut grad = FeatureMap::zeros(recon.c, recon.h, recon.w);
        let mut loss = 0.0;
        if self.lambda_mse != 0.0 {
            let mut ss = 0.0;
            let k = lit::<T>(2.0 * self.lambda_mse / n);
            for ((g, &r), &t) in grad.data.iter_mut().zip(&recon.data).zip(&self.target.data) {
                let d = r - t;
                ss += d.to_f64().unwrap().powi(2);
                *g = k * d;
            }
            loss += self.lambda_mse * ss / n;
        }
        if self.lambda_vgg != 0.0 {
            let (taps, trace) = self.extractor.extract(recon);
            let mut d_taps = Vec::with_capacity(taps.len());
            for (fa, fb) in taps.iter().zip(&self.target_taps) {
                let count = fa.data.len() as f64;
                let r = normalized_distance(&fa.data, &fb.data);
                loss += self.lambda_vgg * smooth_l1(r);
                // d z / d F = z'(r) * (Fa - Fb) / (r * count); below r = 1 this is (Fa - Fb) / count.
                let coef = if r < 1.0 {
                    self.lambda_vgg / count
                } else {
                    self.lambda_vgg / (r * count)
                };
                let c = lit::<T>(coef);
                let d: Vec<T> = fa.data.iter().zip(&fb.data).map(|(&a, &b)| c * (a - b)).collect();
                d_taps.push(FeatureMap::from_vec(fa.c, fa.h, fa.w, d));
            }
            let dx = self.extractor.backward_input(&trace, &d_taps);
            grad.data.iter_mut().zip(&dx.data).for_each(|(a, &b)| *a += b);
        }
        (loss, grad)
    }

    /// Loss of `decoder(w)` and, optionally, decoder weight gradients
    /// (accumulated into `grads`) and the latent gradient.
    pub fn decoder_step(
        &self,
        decoder: &Decoder<T>,
        w: &[T],
        grads: Option<&mut Decoder<T>>,
        need_dw: bool,
    ) -> (f64, Option<Vec<T>>) {
        let trace = decoder.forward(w);
        let (loss, d_img) = self.loss_and_grad(&trace.output);
        if grads.is_none() && !need_dw {
            return (loss, None);
        }
        let dw = decoder.backward(&trace, &d_img, grads, need_dw);
        (loss, dw)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationConfig {
    pub lambda_mse: f64,
    pub lambda_vgg: f64,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            lambda_mse: 1.0,
            lambda_vgg: 1.0,
            steps: 200,
            step_size: 1e-3,
            seed: 0,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambdas(self.lambda_mse, self.lambda_vgg)?;
        if self.lambda_mse == 0.0 && self.lambda_vgg == 0.0 {
            return Err(invalid("lambda_mse and lambda_vgg cannot both be zero"));
        }
        if self.steps == 0 {
            return Err(invalid("adaptation needs at least one step"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid("step_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AdaptationResult<T> {
    /// Source encoder with a fine-tuned copy of the decoder.
    pub adapted_model: GenerativeAutoencoder<T>,
    pub fixed_latent: LatentCode<T>,
    /// Loss before any update followed by the loss after each update.
    pub loss_curve: Vec<f64>,
    pub config: AdaptationConfig,
}

/// Fine-tunes a clone of the decoder so that `decode(w)` approaches `image`.
pub fn adapt_decoder<T: Scalar, E: FeatureExtractor<T>>(
    model: &GenerativeAutoencoder<T>,
    w: &LatentCode<T>,
    image: &ImageTensor<T>,
    extractor: &E,
    config: &AdaptationConfig,
) -> Result<AdaptationResult<T>> {
    adapt_decoder_with_progress(model, w, image, extractor, config, |_, _| true)
}

/// As [`adapt_decoder`], calling `on_step(step, loss)` after every loss
/// evaluation. Returning `false` aborts with a validation error.
pub fn adapt_decoder_with_progress<T: Scalar, E: FeatureExtractor<T>>(
    model: &GenerativeAutoencoder<T>,
    w: &LatentCode<T>,
    image: &ImageTensor<T>,
    extractor: &E,
    config: &AdaptationConfig,
    mut on_step: impl FnMut(usize, f64) -> bool,
) -> Result<AdaptationResult<T>> {
    config.validate()?;
    model.decode(w)?;
    model.check_image(image)?;
    let target = LossTarget::new(extractor, image, config.lambda_mse, config.lambda_vgg)?;

    let mut adapted = model.clone();
    let mut grads = adapted.decoder.clone();
    let mut opt = Adam::new(AdamConfig::with_lr(config.step_size), &adapted.decoder);
    let mut curve = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let last = step == config.steps;
        grads.zero_();
        let (loss, _) = target.decoder_step(
            &adapted.decoder,
            w.values(),
            (!last).then_some(&mut grads),
            false,
        );
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        curve.push(loss);
        if !on_step(step, loss) {
            return Err(invalid(format!("adaptation cancelled at step {step}")));
        }
        if !last {
            opt.step(&mut adapted.decoder, &grads);
        }
    }
    Ok(AdaptationResult {
        adapted_model: adapted,
        fixed_latent: w.clone(),
        loss_curve: curve,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchConfig;

    fn img(seed: u64, size: usize) -> ImageTensor<f64> {
        let mut s = seed;
        ImageTensor::from_fn(size, size, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(1.0), 0.5);
        assert_eq!(smooth_l1_grad(1.0), 1.0);
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let e = PerceptualExtractor::<f64>::new(1);
        let a = img(3, 32);
        assert_eq!(perceptual_loss(&e, &a, &a).unwrap(), 0.0);
        assert_eq!(total_loss(&a, &a, &e, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_mse() {
        let e = PerceptualExtractor::<f64>::new(1);
        let a = ImageTensor::<f64>::constant(16, 16, 0.3);
        let b = ImageTensor::<f64>::constant(16, 16, 0.4);
        let l = total_loss(&a, &b, &e, 1.0, 0.0).unwrap();
        assert!((l - 0.01).abs() < 1e-12);
        let l2 = total_loss(&a, &b, &e, 2.5, 0.0).unwrap();
        assert!((l2 - 0.025).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let e = PerceptualExtractor::<f64>::new(1);
        let r = perceptual_loss(&e, &img(1, 16), &img(1, 32));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn recon_gradient_matches_finite_differences() {
        let e = PerceptualExtractor::<f64>::new(2);
        let target = img(5, 16);
        let recon = img(6, 16);
        let t = LossTarget::new(&e, &target, 0.7, 1.3).unwrap();
        let map = recon.to_feature_map();
        let (l0, g) = t.loss_and_grad(&map);
        assert!((l0 - total_loss(&target, &recon, &e, 0.7, 1.3).unwrap()).abs() < 1e-12);
        let h = 1e-6;
        for i in (0..map.data.len()).step_by(53) {
            let mut p = map.clone();
            p.data[i] += h;
            let mut m = map.clone();
            m.data[i] -= h;
            let fd = (t.loss_and_grad(&p).0 - t.loss_and_grad(&m).0) / (2.0 * h);
            assert!((fd - g.data[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g.data[i]);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = AdaptationConfig::default();
        c.lambda_mse = 0.0;
        c.lambda_vgg = 0.0;
        assert!(c.validate().is_err());
        let c = AdaptationConfig {
            steps: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn one_step_adaptation_curve() {
        let m = GenerativeAutoencoder::<f32>::new(ArchConfig::tiny16(), 1).unwrap().eval();
        let e = PerceptualExtractor::<f32>::new(0);
        let image = ImageTensor::<f32>::constant(16, 16, 0.2);
        let w = m.sample_prior(4);
        let cfg = AdaptationConfig {
            steps: 1,
            ..Default::default()
        };
        let before = m.weight_hash();
        let r = adapt_decoder(&m, &w, &image, &e, &cfg).unwrap();
        assert_eq!(r.loss_curve.len(), 2);
        assert!(r.loss_curve.iter().all(|v| v.is_finite()));
        assert!(r.fixed_latent.bit_eq(&w));
        assert_eq!(before, m.weight_hash());
        assert_eq!(r.adapted_model.encoder_hash(), m.encoder_hash());
        assert_ne!(r.adapted_model.decoder_hash(), m.decoder_hash());
    }
}
