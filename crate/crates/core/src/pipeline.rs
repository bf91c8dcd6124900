//! The five benchmark variants: how each projects an image and whether it
//! adapts the decoder afterwards.

use std::borrow::Cow;

use crate::adaptation::{adapt_decoder, AdaptationConfig, FeatureExtractor};
use crate::error::Result;
use crate::image::ImageTensor;
use crate::inversion::{project_encoder, project_latent_opt, project_random, LatentInit, LatentOptConfig};
use crate::latent::LatentCode;
use crate::metrics::Algorithm;
use crate::model::GenerativeAutoencoder;
use crate::scalar::Scalar;

/// Output of one variant on one image.
#[derive(Clone, Debug)]
pub struct VariantOutput<'m, T: Scalar> {
    pub latent: LatentCode<T>,
    /// The source model for non-adapting variants, else the adapted clone.
    pub model: Cow<'m, GenerativeAutoencoder<T>>,
    pub adaptation_curve: Vec<f64>,
    pub latent_opt_curve: Vec<f64>,
}

impl<T: Scalar> VariantOutput<'_, T> {
    pub fn reconstruction(&self) -> Result<ImageTensor<T>> {
        self.model.decode(&self.latent)
    }
}

/// Seed of the random projection for image `index`.
pub fn random_projection_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

/// Runs `algorithm` on `image`:
/// - vanilla: encoder projection;
/// - latent_opt: encoder init, latent optimization;
/// - oneshot_random: prior sample, adaptation;
/// - oneshot_latent_opt: encoder init, latent optimization, adaptation;
/// - oneshot_encoder: encoder projection, adaptation.
pub fn run_variant<'m, T: Scalar, E: FeatureExtractor<T>>(
    model: &'m GenerativeAutoencoder<T>,
    algorithm: Algorithm,
    image: &ImageTensor<T>,
    random_seed: u64,
    extractor: &E,
    latent_opt: &LatentOptConfig,
    adaptation: &AdaptationConfig,
) -> Result<VariantOutput<'m, T>> {
    let mut latent_opt_curve = Vec::new();
    let latent = match algorithm {
        Algorithm::Vanilla | Algorithm::OneshotEncoder => project_encoder(model, image)?,
        Algorithm::OneshotRandom => {
            model.check_image(image)?;
            project_random(model, random_seed)
        }
        Algorithm::LatentOpt | Algorithm::OneshotLatentOpt => {
            let cfg = LatentOptConfig {
                init: LatentInit::Encoder,
                ..latent_opt.clone()
            };
            let r = project_latent_opt(model, image, extractor, &cfg)?;
            latent_opt_curve = r.loss_curve;
            r.latent
        }
    };
    if !algorithm.adapts() {
        return Ok(VariantOutput {
            latent,
            model: Cow::Borrowed(model),
            adaptation_curve: Vec::new(),
            latent_opt_curve,
        });
    }
    let r = adapt_decoder(model, &latent, image, extractor, adaptation)?;
    Ok(VariantOutput {
        latent,
        model: Cow::Owned(r.adapted_model),
        adaptation_curve: r.loss_curve,
        latent_opt_curve,
    })
}
