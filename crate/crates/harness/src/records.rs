//! JSON-lines persistence of benchmark records with a completion index so
//! interrupted runs resume where they stopped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use alae_core::metrics::{Algorithm, MetricRecord};
use serde::{Deserialize, Serialize};

use crate::{config_err, Result};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorkKey {
    pub algorithm: Algorithm,
    pub image_index: usize,
}

/// Canonical record order: algorithm, attribute, image, alpha.
pub fn sort_records(records: &mut [MetricRecord]) {
    records.sort_by(|a, b| {
        (a.algorithm, a.attribute, a.image_index)
            .cmp(&(b.algorithm, b.attribute, b.image_index))
            .then(a.alpha.unwrap_or(0.0).total_cmp(&b.alpha.unwrap_or(0.0)))
    });
}

pub struct RecordStore {
    dir: PathBuf,
}

impl RecordStore {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn read_lines<D: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Vec<D>> {
        let p = self.dir.join(name);
        if !p.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for (i, line) in BufReader::new(File::open(&p)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(v) => out.push(v),
                // A torn final line from an interrupted write is dropped.
                Err(e) if e.is_eof() => log::warn!("{}:{}: dropping truncated line", p.display(), i + 1),
                Err(e) => return Err(config_err(format!("{}:{}: {e}", p.display(), i + 1))),
            }
        }
        Ok(out)
    }

    pub fn completed(&self) -> Result<BTreeSet<WorkKey>> {
        Ok(self.read_lines::<WorkKey>(INDEX_FILE)?.into_iter().collect())
    }

    /// Records of completed work units, deduplicated and in canonical order.
    pub fn load(&self) -> Result<Vec<MetricRecord>> {
        let done = self.completed()?;
        let mut unique = BTreeMap::new();
        for r in self.read_lines::<MetricRecord>(RECORDS_FILE)? {
            let key = WorkKey {
                algorithm: r.algorithm,
                image_index: r.image_index,
            };
            if done.contains(&key) {
                let id = (r.algorithm, r.attribute, r.image_index, r.alpha.map(f64::to_bits));
                unique.insert(id, r);
            }
        }
        let mut v: Vec<MetricRecord> = unique.into_values().collect();
        sort_records(&mut v);
        Ok(v)
    }

    /// Rewrites both files to hold only completed units, dropping leftovers
    /// of a unit that was interrupted mid-write.
    pub fn compact(&self) -> Result<()> {
        let records = self.load()?;
        let done = self.completed()?;
        let mut f = File::create(self.dir.join(RECORDS_FILE))?;
        for r in &records {
            writeln!(f, "{}", serde_json::to_string(r).map_err(alae_core::Error::from)?)?;
        }
        let mut f = File::create(self.dir.join(INDEX_FILE))?;
        for k in &done {
            writeln!(f, "{}", serde_json::to_string(k).map_err(alae_core::Error::from)?)?;
        }
        Ok(())
    }

    /// Appends a finished unit: its records first, then the index entry.
    pub fn append(&self, key: WorkKey, records: &[MetricRecord]) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(RECORDS_FILE))?;
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r).map_err(alae_core::Error::from)?);
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())?;
        f.sync_data()?;
        let mut idx = OpenOptions::new().create(true).append(true).open(self.dir.join(INDEX_FILE))?;
        writeln!(idx, "{}", serde_json::to_string(&key).map_err(alae_core::Error::from)?)?;
        idx.sync_data()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(alg: Algorithm, i: usize, ssim: f64) -> MetricRecord {
        MetricRecord {
            algorithm: alg,
            attribute: None,
            image_index: i,
            alpha: None,
            ssim,
            psnr: f64::INFINITY,
            swd: 0.0,
            identity_error: None,
            attribute_change: None,
        }
    }

    #[test]
    fn only_indexed_units_survive() {
        let dir = tempfile::tempdir().unwrap();
        let s = RecordStore::open(dir.path()).unwrap();
        s.append(
            WorkKey {
                algorithm: Algorithm::Vanilla,
                image_index: 1,
            },
            &[rec(Algorithm::Vanilla, 1, 0.5)],
        )
        .unwrap();
        // A unit whose index entry never landed.
        let mut f = OpenOptions::new().append(true).open(dir.path().join(RECORDS_FILE)).unwrap();
        writeln!(f, "{}", serde_json::to_string(&rec(Algorithm::Vanilla, 0, 0.1)).unwrap()).unwrap();
        write!(f, "{{\"algorithm\":\"van").unwrap();
        drop(f);
        let loaded = s.load().unwrap();
        assert_eq!(loaded, vec![rec(Algorithm::Vanilla, 1, 0.5)]);
        s.compact().unwrap();
        let text = std::fs::read_to_string(dir.path().join(RECORDS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("\"psnr\":\"inf\""));
    }

    #[test]
    fn canonical_order_is_algorithm_then_image() {
        let mut v = vec![
            rec(Algorithm::OneshotEncoder, 0, 0.0),
            rec(Algorithm::Vanilla, 2, 0.0),
            rec(Algorithm::Vanilla, 1, 0.0),
        ];
        sort_records(&mut v);
        let keys: Vec<_> = v.iter().map(|r| (r.algorithm, r.image_index)).collect();
        assert_eq!(
            keys,
            vec![(Algorithm::Vanilla, 1), (Algorithm::Vanilla, 2), (Algorithm::OneshotEncoder, 0)]
        );
    }
}
