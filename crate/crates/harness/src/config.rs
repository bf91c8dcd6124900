//! Benchmark configuration, read from JSON with field names as below.

use std::path::{Path, PathBuf};

use alae_core::adaptation::AdaptationConfig;
use alae_core::faces::Attribute;
use alae_core::inversion::LatentOptConfig;
use alae_core::metrics::Algorithm;
use serde::{Deserialize, Serialize};

use crate::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub algorithms: Vec<Algorithm>,
    pub attributes: Vec<Attribute>,
    pub n_images: usize,
    /// Edit strengths in units of latent std along each direction.
    pub alphas: Vec<f64>,
    /// Base seed for random projections.
    pub seed: u64,
    pub swd_seed: u64,
    pub extractor_seed: u64,
    pub checkpoint: PathBuf,
    /// Directory written by `make-dataset`.
    pub dataset: PathBuf,
    /// Directory holding `<attribute>.json` direction files.
    pub directions: PathBuf,
    pub out_dir: PathBuf,
    pub adaptation: AdaptationConfig,
    pub latent_opt: LatentOptConfig,
    pub workers: usize,
    pub deterministic: bool,
    /// Number of leading images that get figure grids.
    pub grid_images: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::ALL.to_vec(),
            attributes: Attribute::ALL.to_vec(),
            n_images: 100,
            alphas: vec![-3.0, -1.5, 0.0, 1.5, 3.0],
            seed: 0,
            swd_seed: 0,
            extractor_seed: 0,
            checkpoint: PathBuf::from("toy.ckpt"),
            dataset: PathBuf::from("dataset"),
            directions: PathBuf::from("directions"),
            out_dir: PathBuf::from("bench_out"),
            adaptation: AdaptationConfig::default(),
            latent_opt: LatentOptConfig::default(),
            workers: 1,
            deterministic: false,
            grid_images: 4,
        }
    }
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    /// Checks values and that every input path exists.
    pub fn validate(&self, needs_directions: bool) -> Result<()> {
        if self.n_images == 0 {
            return Err(config_err("n_images must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(config_err("no algorithms selected"));
        }
        if self.workers == 0 {
            return Err(config_err("workers must be at least 1"));
        }
        if self.alphas.iter().any(|a| !a.is_finite()) {
            return Err(config_err("alphas must be finite"));
        }
        self.adaptation.validate().map_err(|e| config_err(format!("adaptation: {e}")))?;
        self.latent_opt.validate().map_err(|e| config_err(format!("latent_opt: {e}")))?;
        if !self.checkpoint.is_file() {
            return Err(config_err(format!("checkpoint {} not found", self.checkpoint.display())));
        }
        if !self.dataset.is_dir() {
            return Err(config_err(format!("dataset {} not found", self.dataset.display())));
        }
        if needs_directions {
            if self.attributes.is_empty() {
                return Err(config_err("no attributes selected"));
            }
            for a in &self.attributes {
                let p = direction_path(&self.directions, *a);
                if !p.is_file() {
                    return Err(config_err(format!("direction file {} not found", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn effective_workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers
        }
    }
}

pub fn direction_path(dir: &Path, attribute: Attribute) -> PathBuf {
    dir.join(format!("{}.json", attribute.name()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_unknown_fields_fail() {
        let c = BenchConfig::default();
        let j = serde_json::to_string(&c).unwrap();
        let back: BenchConfig = serde_json::from_str(&j).unwrap();
        assert_eq!(c, back);
        assert!(serde_json::from_str::<BenchConfig>(r#"{"n_imgs": 3}"#).is_err());
        let partial: BenchConfig = serde_json::from_str(r#"{"n_images": 3, "algorithms": ["vanilla"]}"#).unwrap();
        assert_eq!(partial.n_images, 3);
        assert_eq!(partial.algorithms, vec![Algorithm::Vanilla]);
    }

    #[test]
    fn missing_paths_are_config_errors() {
        let c = BenchConfig {
            checkpoint: "/nonexistent/x.ckpt".into(),
            ..Default::default()
        };
        let e = c.validate(false).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
