//! Latent projection: encoder, iterative optimization, or a random prior draw.

use serde::{Deserialize, Serialize};

use crate::adaptation::{FeatureExtractor, LossTarget};
use crate::error::{invalid, Error, Result};
use crate::image::ImageTensor;
use crate::latent::LatentCode;
use crate::model::GenerativeAutoencoder;
use crate::nn::{Adam, AdamConfig, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentInit {
    Encoder,
    Prior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentOptConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Prior seed when `init` is `prior`.
    pub seed: u64,
    pub init: LatentInit,
    pub record_curve: bool,
    pub lambda_mse: f64,
    pub lambda_vgg: f64,
}

impl Default for LatentOptConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            step_size: 5e-3,
            seed: 0,
            init: LatentInit::Encoder,
            record_curve: true,
            lambda_mse: 1.0,
            lambda_vgg: 1.0,
        }
    }
}

impl LatentOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("latent optimization needs at least one step"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid("step_size must be positive"));
        }
        if !(self.lambda_mse >= 0.0 && self.lambda_vgg >= 0.0) || self.lambda_mse + self.lambda_vgg == 0.0 {
            return Err(invalid("loss weights must be non-negative and not both zero"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LatentOptResult<T> {
    /// Best iterate seen (lowest loss).
    pub latent: LatentCode<T>,
    /// Loss at the initial latent followed by the loss after each update;
    /// empty when `record_curve` is off.
    pub loss_curve: Vec<f64>,
    pub best_loss: f64,
    pub best_step: usize,
}

/// `E(image)`.
pub fn project_encoder<T: Scalar>(model: &GenerativeAutoencoder<T>, image: &ImageTensor<T>) -> Result<LatentCode<T>> {
    model.encode(image)
}

/// A prior sample; the image plays no part.
pub fn project_random<T: Scalar>(model: &GenerativeAutoencoder<T>, seed: u64) -> LatentCode<T> {
    model.sample_prior(seed)
}

/// Adam on `w` against the pixel + perceptual loss with the decoder frozen.
pub fn project_latent_opt<T: Scalar, E: FeatureExtractor<T>>(
    model: &GenerativeAutoencoder<T>,
    image: &ImageTensor<T>,
    extractor: &E,
    config: &LatentOptConfig,
) -> Result<LatentOptResult<T>> {
    project_latent_opt_with_progress(model, image, extractor, config, |_, _| true)
}

/// As [`project_latent_opt`], calling `on_step(step, loss)` after every
/// loss evaluation. Returning `false` aborts with a validation error.
pub fn project_latent_opt_with_progress<T: Scalar, E: FeatureExtractor<T>>(
    model: &GenerativeAutoencoder<T>,
    image: &ImageTensor<T>,
    extractor: &E,
    config: &LatentOptConfig,
    mut on_step: impl FnMut(usize, f64) -> bool,
) -> Result<LatentOptResult<T>> {
    config.validate()?;
    model.require_eval()?;
    model.check_image(image)?;
    let init = match config.init {
        LatentInit::Encoder => model.encode(image)?,
        LatentInit::Prior => model.sample_prior(config.seed),
    };
    let target = LossTarget::new(extractor, image, config.lambda_mse, config.lambda_vgg)?;
    let d_w = model.d_w();
    let mut w = Tensor::from_vec(&[d_w], init.into_values());
    let mut opt = Adam::new(
        AdamConfig {
            lr: config.step_size,
            ..AdamConfig::default()
        },
        &w,
    );
    let mut curve = Vec::new();
    let mut best = (f64::INFINITY, 0usize, w.data.clone());
    for step in 0..=config.steps {
        let last = step == config.steps;
        let (loss, grad) = target.decoder_step(&model.decoder, &w.data, None, !last);
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        if config.record_curve {
            curve.push(loss);
        }
        if loss < best.0 {
            best = (loss, step, w.data.clone());
        }
        if !on_step(step, loss) {
            return Err(invalid(format!("latent optimization cancelled at step {step}")));
        }
        if let Some(g) = grad {
            opt.step(&mut w, &Tensor::from_vec(&[d_w], g));
        }
    }
    Ok(LatentOptResult {
        latent: LatentCode::new(best.2)?,
        loss_curve: curve,
        best_loss: best.0,
        best_step: best.1,
    })
}
