//! Adapted models kept in memory up to a capacity, older ones spilled to
//! checkpoint files and reloaded on demand.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use alae_core::model::{load_checkpoint, save_checkpoint};
use alae_core::{Autoencoder, Result};

pub struct ModelCache {
    capacity: usize,
    order: VecDeque<String>,
    models: HashMap<String, Arc<Autoencoder>>,
    spill_dir: PathBuf,
}

impl ModelCache {
    pub fn new(capacity: usize, spill_dir: &Path) -> Self {
        Self {
            capacity: capacity.max(1),
            order: VecDeque::new(),
            models: HashMap::new(),
            spill_dir: spill_dir.to_path_buf(),
        }
    }

    fn spill_path(&self, key: &str) -> PathBuf {
        self.spill_dir.join(format!("{key}.ckpt"))
    }

    fn touch(&mut self, key: &str) {
        self.order.retain(|k| k != key);
        self.order.push_back(key.to_string());
    }

    fn evict(&mut self) -> Result<()> {
        while self.order.len() > self.capacity {
            let old = self.order.pop_front().unwrap();
            if let Some(m) = self.models.remove(&old) {
                std::fs::create_dir_all(&self.spill_dir)?;
                save_checkpoint(&m, self.spill_path(&old))?;
                log::debug!("spilled adapted model {old}");
            }
        }
        Ok(())
    }

    pub fn insert(&mut self, key: &str, model: Arc<Autoencoder>) -> Result<()> {
        let stale = self.spill_path(key);
        if stale.exists() {
            std::fs::remove_file(stale)?;
        }
        self.models.insert(key.to_string(), model);
        self.touch(key);
        self.evict()
    }

    pub fn get(&mut self, key: &str) -> Result<Option<Arc<Autoencoder>>> {
        if let Some(m) = self.models.get(key).cloned() {
            self.touch(key);
            return Ok(Some(m));
        }
        let p = self.spill_path(key);
        if !p.exists() {
            return Ok(None);
        }
        let m = Arc::new(load_checkpoint::<f32>(&p)?);
        self.models.insert(key.to_string(), m.clone());
        self.touch(key);
        std::fs::remove_file(&p)?;
        self.evict()?;
        Ok(Some(m))
    }

    pub fn resident(&self) -> usize {
        self.models.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alae_core::model::ArchConfig;

    #[test]
    fn eviction_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ModelCache::new(1, dir.path());
        let a = Arc::new(Autoencoder::new(ArchConfig::tiny16(), 1).unwrap().eval());
        let b = Arc::new(Autoencoder::new(ArchConfig::tiny16(), 2).unwrap().eval());
        c.insert("a", a.clone()).unwrap();
        c.insert("b", b.clone()).unwrap();
        assert_eq!(c.resident(), 1);
        assert!(dir.path().join("a.ckpt").exists());
        let back = c.get("a").unwrap().unwrap();
        assert_eq!(back.weight_hash(), a.weight_hash());
        assert_eq!(c.resident(), 1);
        assert!(c.get("zzz").unwrap().is_none());
        assert_eq!(c.get("b").unwrap().unwrap().weight_hash(), b.weight_hash());
    }
}
