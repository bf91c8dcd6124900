//! One-shot identity-preserving latent editing on a style-based autoencoder.
//!
//! Pipeline: project an image into the style latent space ([`inversion`]),
//! fine-tune a cloned decoder toward that single image with the latent held
//! fixed ([`adaptation`]), then edit by moving the latent along a fitted
//! attribute hyperplane normal ([`editing`]). [`metrics`] scores the results.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the production precision.

pub mod adaptation;
pub mod editing;
pub mod error;
pub mod faces;
pub mod image;
pub mod inversion;
pub mod latent;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod scalar;

pub use error::{CheckpointError, Error, Result};
pub use scalar::Scalar;

/// Production model precision.
pub type Autoencoder = model::GenerativeAutoencoder<f32>;
pub type Image = image::ImageTensor<f32>;
pub type Latent = latent::LatentCode<f32>;
pub type Dataset = faces::SyntheticDataset<f32>;
pub type Extractor = adaptation::PerceptualExtractor<f32>;
pub type Direction = editing::AttributeDirection;

/// Double-precision variants used for gradient verification.
pub type Autoencoder64 = model::GenerativeAutoencoder<f64>;
pub type Image64 = image::ImageTensor<f64>;
