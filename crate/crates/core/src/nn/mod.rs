//! Minimal neural-network engine: tensors, layers with hand-written
//! backward passes, and the Adam optimizer.

mod adam;
mod layers;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::*;
pub use tensor::{join, FeatureMap, Parameters, Tensor};
