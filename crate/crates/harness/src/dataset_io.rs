//! On-disk synthetic datasets: `images/NNNNN.png`, `factors.json` and a
//! small `dataset.json` descriptor.

use std::path::Path;

use alae_core::faces::{FaceFactors, SyntheticDataset};
use alae_core::image::ImageTensor;
use alae_core::Scalar;
use serde::{Deserialize, Serialize};

use crate::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub seed: u64,
    pub n: usize,
    pub size: usize,
}

pub fn image_name(index: usize) -> String {
    format!("{index:05}.png")
}

pub fn write_dataset<T: Scalar>(dir: &Path, ds: &SyntheticDataset<T>) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images)?;
    for (i, img) in ds.images.iter().enumerate() {
        std::fs::write(images.join(image_name(i)), img.to_png()?)?;
    }
    let factors = serde_json::to_string_pretty(&ds.factors).map_err(alae_core::Error::from)?;
    std::fs::write(dir.join("factors.json"), factors)?;
    let info = DatasetInfo {
        seed: ds.seed,
        n: ds.len(),
        size: ds.size,
    };
    std::fs::write(
        dir.join("dataset.json"),
        serde_json::to_string_pretty(&info).map_err(alae_core::Error::from)?,
    )?;
    Ok(())
}

/// Reads the first `limit` images (all when `None`).
pub fn read_dataset<T: Scalar>(dir: &Path, limit: Option<usize>) -> Result<SyntheticDataset<T>> {
    let info: DatasetInfo = read_json(&dir.join("dataset.json"))?;
    let factors: Vec<FaceFactors> = read_json(&dir.join("factors.json"))?;
    if factors.len() != info.n {
        return Err(config_err(format!(
            "{}: factors.json has {} entries, dataset.json says {}",
            dir.display(),
            factors.len(),
            info.n
        )));
    }
    let n = limit.unwrap_or(info.n);
    if n > info.n {
        return Err(config_err(format!("requested {n} images but {} has only {}", dir.display(), info.n)));
    }
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let p = dir.join("images").join(image_name(i));
        let bytes = std::fs::read(&p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
        images.push(ImageTensor::from_png(&bytes)?);
    }
    Ok(SyntheticDataset::from_parts(images, factors[..n].to_vec(), info.seed)?)
}

fn read_json<D: serde::de::DeserializeOwned>(p: &Path) -> Result<D> {
    let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))
}
