//! The style-based autoencoder: encoder `E`, prior mapping `F`, decoder `D`
//! and the discriminator used only while training the toy model.

mod checkpoint;
mod networks;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use networks::{ConvStack, ConvStackTrace, Decoder, DecoderTrace, Mapping, MappingTrace};
pub use train::{train_toy, EpochLosses, TrainConfig, TrainOutcome};

use crate::error::{dim_err, invalid, Result};
use crate::image::ImageTensor;
use crate::latent::LatentCode;
use crate::nn::{FeatureMap, Parameters, Tensor};
use crate::scalar::{lit, Scalar};

/// Layer widths and sizes of the toy architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub image_size: usize,
    pub d_w: usize,
    /// Four conv stages, each followed by 2x pooling.
    pub encoder_channels: Vec<usize>,
    /// Stem width followed by one width per upsampling style block.
    pub decoder_channels: Vec<usize>,
    pub discriminator_channels: Vec<usize>,
    pub mapping_layers: usize,
}

impl ArchConfig {
    /// The default 64x64, `d_w = 128` architecture.
    pub fn toy64() -> Self {
        Self {
            image_size: 64,
            d_w: 128,
            encoder_channels: vec![16, 32, 48, 64],
            decoder_channels: vec![64, 48, 32, 24, 16],
            discriminator_channels: vec![8, 16, 32],
            mapping_layers: 3,
        }
    }

    /// Same topology at an arbitrary power-of-two resolution.
    pub fn with_size(image_size: usize) -> Self {
        Self {
            image_size,
            ..Self::toy64()
        }
    }

    /// A tiny 16x16 configuration for gradient checks.
    pub fn tiny16() -> Self {
        Self {
            image_size: 16,
            d_w: 8,
            encoder_channels: vec![4, 4, 6, 6],
            decoder_channels: vec![6, 6, 4, 4, 4],
            discriminator_channels: vec![4, 4, 4],
            mapping_layers: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.image_size;
        if s < 16 || !s.is_power_of_two() {
            return Err(invalid(format!("image_size {s} must be a power of two >= 16")));
        }
        if self.d_w == 0 {
            return Err(invalid("d_w must be positive"));
        }
        if self.encoder_channels.len() != 4 || self.decoder_channels.len() != 5 {
            return Err(invalid("expected 4 encoder stages and 4 decoder blocks"));
        }
        if self.discriminator_channels.is_empty() || (s >> self.discriminator_channels.len()) == 0 {
            return Err(invalid("bad discriminator depth"));
        }
        if self.mapping_layers == 0 {
            return Err(invalid("mapping network needs at least one layer"));
        }
        Ok(())
    }

    pub fn num_style_layers(&self) -> usize {
        self.decoder_channels.len() - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    Train,
    Eval,
}

/// Provenance recorded alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub training_seed: u64,
    pub dataset: String,
}

/// Paired encoder/decoder with their prior mapping and training discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeAutoencoder<T> {
    pub arch: ArchConfig,
    pub encoder: ConvStack<T>,
    pub mapping: Mapping<T>,
    pub decoder: Decoder<T>,
    pub discriminator: ConvStack<T>,
    pub mode: ModelMode,
    pub metadata: ModelMetadata,
}

impl<T: Scalar> Parameters<T> for GenerativeAutoencoder<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        use crate::nn::join;
        self.encoder.collect(&join(prefix, "encoder"), out);
        self.mapping.collect(&join(prefix, "mapping"), out);
        self.decoder.collect(&join(prefix, "decoder"), out);
        self.discriminator.collect(&join(prefix, "discriminator"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        use crate::nn::join;
        self.encoder.collect_mut(&join(prefix, "encoder"), out);
        self.mapping.collect_mut(&join(prefix, "mapping"), out);
        self.decoder.collect_mut(&join(prefix, "decoder"), out);
        self.discriminator.collect_mut(&join(prefix, "discriminator"), out);
    }
}

/// SHA-256 over parameter names and raw value bits.
pub fn weight_hash<T: Scalar, P: Parameters<T>>(params: &P) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.named_params() {
        h.update(name.as_bytes());
        for d in &t.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in &t.data {
            h.update(v.to_f64().unwrap().to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl<T: Scalar> GenerativeAutoencoder<T> {
    /// Randomly initialized model (train mode).
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = ConvStack::new(arch.image_size, &arch.encoder_channels, arch.d_w, &mut rng);
        let mapping = Mapping::new(arch.d_w, arch.mapping_layers, &mut rng);
        let decoder = Decoder::new(arch.image_size, arch.d_w, &arch.decoder_channels, &mut rng);
        let discriminator = ConvStack::new(arch.image_size, &arch.discriminator_channels, 1, &mut rng);
        Ok(Self {
            arch,
            encoder,
            mapping,
            decoder,
            discriminator,
            mode: ModelMode::Train,
            metadata: ModelMetadata {
                training_seed: seed,
                dataset: String::new(),
            },
        })
    }

    pub fn d_w(&self) -> usize {
        self.arch.d_w
    }

    pub fn image_size(&self) -> usize {
        self.arch.image_size
    }

    pub fn num_style_layers(&self) -> usize {
        self.decoder.num_style_layers()
    }

    pub fn eval(mut self) -> Self {
        self.mode = ModelMode::Eval;
        self
    }

    pub fn weight_hash(&self) -> String {
        weight_hash(self)
    }

    pub fn decoder_hash(&self) -> String {
        weight_hash(&self.decoder)
    }

    pub fn encoder_hash(&self) -> String {
        weight_hash(&self.encoder)
    }

    pub(crate) fn require_eval(&self) -> Result<()> {
        match self.mode {
            ModelMode::Eval => Ok(()),
            ModelMode::Train => Err(invalid("model must be in eval mode for inference")),
        }
    }

    pub fn check_image(&self, image: &ImageTensor<T>) -> Result<()> {
        let s = self.arch.image_size;
        if image.height() != s || image.width() != s {
            return Err(dim_err(format!(
                "image is {}x{}, model expects {s}x{s}",
                image.height(),
                image.width()
            )));
        }
        if image.pixels().iter().any(|v| !v.is_finite()) {
            return Err(invalid("image contains non-finite pixels"));
        }
        Ok(())
    }

    /// `E(image)`.
    pub fn encode(&self, image: &ImageTensor<T>) -> Result<LatentCode<T>> {
        self.require_eval()?;
        self.check_image(image)?;
        let (w, _) = self.encoder.forward(&image.to_feature_map());
        LatentCode::new(w)
    }

    /// `D(w)`, clamped into `[0, 1]`.
    pub fn decode(&self, w: &LatentCode<T>) -> Result<ImageTensor<T>> {
        self.require_eval()?;
        w.check_dim(self.arch.d_w)?;
        Ok(self.decode_map(w.values()).into_image())
    }

    pub(crate) fn decode_map(&self, w: &[T]) -> DecodedMap<T> {
        DecodedMap(self.decoder.forward(w).output)
    }

    /// Standard-normal noise of length `d_w` pushed through the mapping network.
    pub fn sample_prior(&self, seed: u64) -> LatentCode<T> {
        let z = prior_noise::<T>(self.arch.d_w, seed);
        let (w, _) = self.mapping.forward(&z);
        LatentCode::new(w).expect("mapping output is finite")
    }

    /// `D(E(image))`.
    pub fn reconstruct(&self, image: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        self.decode(&self.encode(image)?)
    }
}

pub(crate) struct DecodedMap<T>(pub FeatureMap<T>);

impl<T: Scalar> DecodedMap<T> {
    pub fn into_image(self) -> ImageTensor<T> {
        ImageTensor::from_feature_map(&self.0)
    }
}

/// Seeded standard-normal noise vector.
pub fn prior_noise<T: Scalar>(dim: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            lit(z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GenerativeAutoencoder<f32> {
        GenerativeAutoencoder::new(ArchConfig::tiny16(), 3).unwrap().eval()
    }

    #[test]
    fn encode_decode_shapes_and_range() {
        let m = tiny();
        let img = ImageTensor::constant(16, 16, 0.4);
        let w = m.encode(&img).unwrap();
        assert_eq!(w.len(), 8);
        let out = m.decode(&w).unwrap();
        assert_eq!(out.shape(), (16, 16, 3));
        assert!(out.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rejects_wrong_sizes_and_train_mode() {
        let m = tiny();
        assert!(matches!(
            m.encode(&ImageTensor::constant(32, 32, 0.1)),
            Err(crate::Error::Dimension(_))
        ));
        assert!(matches!(m.decode(&LatentCode::zeros(5)), Err(crate::Error::Dimension(_))));
        let mut t = m.clone();
        t.mode = ModelMode::Train;
        assert!(t.decode(&LatentCode::zeros(8)).is_err());
    }

    #[test]
    fn prior_is_seeded() {
        let m = tiny();
        assert!(m.sample_prior(42).bit_eq(&m.sample_prior(42)));
        assert!(!m.sample_prior(1).bit_eq(&m.sample_prior(2)));
    }

    #[test]
    fn inference_does_not_mutate_weights() {
        let m = tiny();
        let before = m.weight_hash();
        let img = ImageTensor::constant(16, 16, 0.7);
        for s in 0..50 {
            let w = m.encode(&img).unwrap();
            m.decode(&w).unwrap();
            m.decode(&m.sample_prior(s)).unwrap();
        }
        assert_eq!(before, m.weight_hash());
    }

    #[test]
    fn cloned_decoder_is_independent() {
        let m = tiny();
        let before = m.weight_hash();
        let mut clone = m.clone();
        clone.decoder.to_rgb.weight.data[0] += 1.0;
        assert_eq!(before, m.weight_hash());
        assert_ne!(before, clone.weight_hash());
    }

    #[test]
    fn arch_validation() {
        assert!(ArchConfig::with_size(48).validate().is_err());
        assert!(ArchConfig::with_size(8).validate().is_err());
        assert!(ArchConfig::with_size(32).validate().is_ok());
    }
}
