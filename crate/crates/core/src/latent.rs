use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::scalar::Scalar;

/// Which latent space a code lives in. Only the single shared style space is
/// supported: one vector broadcast to every decoder style layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LatentSpace {
    #[default]
    W,
}

/// A style-space latent vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode<T> {
    values: Vec<T>,
    space: LatentSpace,
}

impl<T: Scalar> LatentCode<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("latent element {i} is not finite")));
        }
        Ok(Self {
            values,
            space: LatentSpace::W,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![T::zero(); dim],
            space: LatentSpace::W,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn space(&self) -> LatentSpace {
        self.space
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn check_dim(&self, d_w: usize) -> Result<()> {
        if self.values.len() == d_w {
            Ok(())
        } else {
            Err(dim_err(format!(
                "latent has length {}, model expects {d_w}",
                self.values.len()
            )))
        }
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.to_f64().unwrap().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.to_f64().unwrap()).collect()
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_f64().unwrap().to_bits() == b.to_f64().unwrap().to_bits())
    }
}
