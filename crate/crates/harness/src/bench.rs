//! Reconstruction and edit benchmarks over the five variants.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use alae_core::adaptation::{AdaptationConfig, FeatureExtractor};
use alae_core::editing::make_trajectory;
use alae_core::faces::Attribute;
use alae_core::inversion::LatentOptConfig;
use alae_core::metrics::{aggregate, factor_scores, psnr, ssim, swd, Algorithm, MetricRecord, MetricsReport};
use alae_core::model::load_checkpoint;
use alae_core::pipeline::{random_projection_seed, run_variant};
use alae_core::{Autoencoder, Dataset, Direction, Extractor, Image};
use serde::{Deserialize, Serialize};

use crate::config::{direction_path, BenchConfig};
use crate::dataset_io::{image_name, read_dataset};
use crate::grid::{alpha_label, Sheet, Tile};
use crate::records::{RecordStore, WorkKey};
use crate::{config_err, HarnessError, Result, CODE_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    Reconstruction,
    Edit,
}

impl BenchKind {
    fn subdir(self) -> &'static str {
        match self {
            BenchKind::Reconstruction => "recon",
            BenchKind::Edit => "edit",
        }
    }
}

/// Everything a benchmark reads, loaded once.
pub struct BenchInputs {
    pub model: Autoencoder,
    pub dataset: Dataset,
    pub extractor: Extractor,
    pub directions: Vec<(Attribute, Direction)>,
    pub checkpoint_hash: String,
}

pub fn load_inputs(cfg: &BenchConfig, needs_directions: bool) -> Result<BenchInputs> {
    cfg.validate(needs_directions)?;
    let model: Autoencoder = load_checkpoint(&cfg.checkpoint)?;
    let dataset: Dataset = read_dataset(&cfg.dataset, Some(cfg.n_images))?;
    if dataset.size != model.image_size() {
        return Err(config_err(format!(
            "dataset images are {0}x{0} but the checkpoint expects {1}x{1}",
            dataset.size,
            model.image_size()
        )));
    }
    let mut directions = Vec::new();
    if needs_directions {
        for &a in &cfg.attributes {
            let d = Direction::load(direction_path(&cfg.directions, a))?;
            if d.d_w != model.d_w() {
                return Err(config_err(format!("direction {a} has d_w {} but the model has {}", d.d_w, model.d_w())));
            }
            directions.push((a, d));
        }
    }
    let checkpoint_hash = model.weight_hash();
    Ok(BenchInputs {
        model,
        dataset,
        extractor: Extractor::new(cfg.extractor_seed),
        directions,
        checkpoint_hash,
    })
}

/// Settings that determine record values. A resumed run must match them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunStamp {
    kind: BenchKind,
    checkpoint_hash: String,
    dataset: String,
    extractor: String,
    seed: u64,
    swd_seed: u64,
    adaptation: AdaptationConfig,
    latent_opt: LatentOptConfig,
    attributes: Vec<Attribute>,
    alphas: Vec<f64>,
}

const STAMP_FILE: &str = "run.json";

fn check_stamp(dir: &Path, stamp: &RunStamp) -> Result<()> {
    let p = dir.join(STAMP_FILE);
    if p.exists() {
        let old: RunStamp = serde_json::from_str(&std::fs::read_to_string(&p)?)
            .map_err(|e| config_err(format!("{}: {e}", p.display())))?;
        if &old != stamp {
            return Err(config_err(format!(
                "{} holds results of a different configuration; use a fresh output directory",
                dir.display()
            )));
        }
    } else {
        let text = serde_json::to_string_pretty(stamp).map_err(alae_core::Error::from)?;
        std::fs::write(&p, text + "\n")?;
    }
    Ok(())
}

fn stamp(kind: BenchKind, cfg: &BenchConfig, inputs: &BenchInputs) -> RunStamp {
    let edit = kind == BenchKind::Edit;
    RunStamp {
        kind,
        checkpoint_hash: inputs.checkpoint_hash.clone(),
        dataset: format!("seed={} size={}", inputs.dataset.seed, inputs.dataset.size),
        extractor: inputs.extractor.fingerprint(),
        seed: cfg.seed,
        swd_seed: cfg.swd_seed,
        adaptation: cfg.adaptation.clone(),
        latent_opt: cfg.latent_opt.clone(),
        attributes: if edit { cfg.attributes.clone() } else { vec![] },
        alphas: if edit { cfg.alphas.clone() } else { vec![] },
    }
}

/// Runs `work` on every pending unit, persisting as units finish.
fn run_units<F>(store: &RecordStore, units: &[WorkKey], workers: usize, work: F) -> Result<()>
where
    F: Fn(WorkKey) -> Result<Vec<MetricRecord>> + Sync,
{
    if workers <= 1 {
        for &u in units {
            let recs = work(u)?;
            store.append(u, &recs)?;
        }
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let first_error: Mutex<Option<HarnessError>> = Mutex::new(None);
    let writer = Mutex::new(store);
    std::thread::scope(|s| {
        for _ in 0..workers.min(units.len()) {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&u) = units.get(i) else { return };
                let res = work(u).and_then(|recs| writer.lock().unwrap().append(u, &recs));
                if let Err(e) = res {
                    failed.store(true, Ordering::SeqCst);
                    first_error.lock().unwrap().get_or_insert(e);
                    return;
                }
            });
        }
    });
    match first_error.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn pending_units(cfg: &BenchConfig, store: &RecordStore) -> Result<Vec<WorkKey>> {
    let done = store.completed()?;
    let mut units = Vec::new();
    for &algorithm in &cfg.algorithms {
        for image_index in 0..cfg.n_images {
            let k = WorkKey { algorithm, image_index };
            if !done.contains(&k) {
                units.push(k);
            }
        }
    }
    Ok(units)
}

fn write_png(path: &Path, image: &Image) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(path, image.to_png()?)?;
    Ok(())
}

fn read_tile(path: &Path) -> Result<Tile> {
    let bytes = std::fs::read(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    Tile::from_png(&bytes)
}

/// Path of the reconstruction PNG of one unit.
pub fn recon_png(dir: &Path, algorithm: Algorithm, image_index: usize) -> PathBuf {
    dir.join("images").join(algorithm.name()).join(image_name(image_index))
}

/// Path of trajectory frame `k` (alphas in sorted order, 0 included).
pub fn trajectory_png(dir: &Path, algorithm: Algorithm, attribute: Attribute, image_index: usize, k: usize) -> PathBuf {
    dir.join("trajectories")
        .join(algorithm.name())
        .join(attribute.name())
        .join(format!("{image_index:05}"))
        .join(format!("{k:02}.png"))
}

/// Alphas as a trajectory lays them out: sorted, deduplicated, with 0.
pub fn trajectory_alphas(alphas: &[f64]) -> Vec<f64> {
    let mut v = alphas.to_vec();
    if !v.contains(&0.0) {
        v.push(0.0);
    }
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn check_pristine(inputs: &BenchInputs) -> Result<()> {
    if inputs.model.weight_hash() != inputs.checkpoint_hash {
        return Err(alae_core::Error::Validation("source model weights changed during the benchmark".into()).into());
    }
    Ok(())
}

fn recon_unit(cfg: &BenchConfig, inputs: &BenchInputs, dir: &Path, u: WorkKey) -> Result<Vec<MetricRecord>> {
    let t = Instant::now();
    let image = &inputs.dataset.images[u.image_index];
    let out = run_variant(
        &inputs.model,
        u.algorithm,
        image,
        random_projection_seed(cfg.seed, u.image_index),
        &inputs.extractor,
        &cfg.latent_opt,
        &cfg.adaptation,
    )?;
    let recon = out.reconstruction()?;
    drop(out);
    check_pristine(inputs)?;
    write_png(&recon_png(dir, u.algorithm, u.image_index), &recon)?;
    let r = MetricRecord {
        algorithm: u.algorithm,
        attribute: None,
        image_index: u.image_index,
        alpha: None,
        ssim: ssim(image, &recon)?,
        psnr: psnr(image, &recon)?,
        swd: swd(image, &recon, cfg.swd_seed)?,
        identity_error: None,
        attribute_change: None,
    };
    log::info!(
        "{} image {}: ssim {:.4} psnr {:.2} ({:.1}s)",
        u.algorithm,
        u.image_index,
        r.ssim,
        r.psnr,
        t.elapsed().as_secs_f64()
    );
    Ok(vec![r])
}

fn edit_unit(cfg: &BenchConfig, inputs: &BenchInputs, dir: &Path, u: WorkKey) -> Result<Vec<MetricRecord>> {
    let t = Instant::now();
    let image = &inputs.dataset.images[u.image_index];
    let out = run_variant(
        &inputs.model,
        u.algorithm,
        image,
        random_projection_seed(cfg.seed, u.image_index),
        &inputs.extractor,
        &cfg.latent_opt,
        &cfg.adaptation,
    )?;
    let mut records = Vec::new();
    for (attribute, direction) in &inputs.directions {
        let traj = make_trajectory(&out.model, &out.latent, direction, &cfg.alphas)?;
        for (k, (&alpha, edited)) in traj.alphas.iter().zip(&traj.images).enumerate() {
            if u.image_index < cfg.grid_images {
                write_png(&trajectory_png(dir, u.algorithm, *attribute, u.image_index, k), edited)?;
            }
            if alpha == 0.0 {
                continue;
            }
            let f = factor_scores(image, edited)?;
            records.push(MetricRecord {
                algorithm: u.algorithm,
                attribute: Some(*attribute),
                image_index: u.image_index,
                alpha: Some(alpha),
                ssim: ssim(image, edited)?,
                psnr: psnr(image, edited)?,
                swd: swd(image, edited, cfg.swd_seed)?,
                identity_error: Some(f.identity_error),
                attribute_change: f.attribute_errors.get(attribute.name()).copied(),
            });
        }
    }
    drop(out);
    check_pristine(inputs)?;
    log::info!(
        "{} image {}: {} edits ({:.1}s)",
        u.algorithm,
        u.image_index,
        records.len(),
        t.elapsed().as_secs_f64()
    );
    Ok(records)
}

fn recon_grid(cfg: &BenchConfig, inputs: &BenchInputs, dir: &Path) -> Result<()> {
    let n = cfg.grid_images.min(cfg.n_images);
    if n == 0 {
        return Ok(());
    }
    let mut rows = vec![(
        "input".to_string(),
        inputs.dataset.images[..n].iter().map(Tile::from_image).collect(),
    )];
    for &a in &cfg.algorithms {
        let tiles = (0..n).map(|i| read_tile(&recon_png(dir, a, i))).collect::<Result<Vec<_>>>()?;
        rows.push((a.name().to_string(), tiles));
    }
    Sheet {
        col_labels: (0..n).map(|i| i.to_string()).collect(),
        rows,
    }
    .write(&dir.join("grid.png"))
}

/// Contact sheet for one (image, attribute): rows are algorithms, columns
/// are alphas.
pub fn edit_sheet(rows: Vec<(Algorithm, Vec<Tile>)>, alphas: &[f64]) -> Sheet {
    Sheet {
        col_labels: alphas.iter().map(|&a| alpha_label(a)).collect(),
        rows: rows.into_iter().map(|(a, t)| (a.name().to_string(), t)).collect(),
    }
}

/// Writes the contact sheet of in-memory trajectories. All trajectories must
/// share the same alphas.
pub fn emit_grids(trajectories: &[(Algorithm, alae_core::editing::EditTrajectory<f32>)], path: &Path) -> Result<()> {
    let first = trajectories.first().ok_or_else(|| config_err("no trajectories to draw"))?;
    if trajectories.iter().any(|(_, t)| t.alphas != first.1.alphas) {
        return Err(config_err("trajectories use different alphas"));
    }
    let rows = trajectories
        .iter()
        .map(|(a, t)| (*a, t.images.iter().map(Tile::from_image).collect()))
        .collect();
    edit_sheet(rows, &first.1.alphas).write(path)
}

fn edit_grids(cfg: &BenchConfig, dir: &Path) -> Result<()> {
    let alphas = trajectory_alphas(&cfg.alphas);
    for i in 0..cfg.grid_images.min(cfg.n_images) {
        for &attr in &cfg.attributes {
            let mut rows = Vec::new();
            for &a in &cfg.algorithms {
                let tiles = (0..alphas.len())
                    .map(|k| read_tile(&trajectory_png(dir, a, attr, i, k)))
                    .collect::<Result<Vec<_>>>()?;
                rows.push((a, tiles));
            }
            edit_sheet(rows, &alphas).write(&dir.join("grids").join(format!("{i:05}_{}.png", attr.name())))?;
        }
    }
    Ok(())
}

/// Identity and attribute-change means per row, for edit reports.
pub fn supplementary_table(report: &MetricsReport) -> String {
    let mut out = String::from("Attribute | Algorithm | identity error | attribute change\n");
    for r in &report.rows {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{} | {} | {} | {}\n",
            r.attribute.map(|a| a.name()).unwrap_or("-"),
            r.algorithm.name(),
            f(r.identity_error_mean),
            f(r.attribute_change_mean)
        ));
    }
    out
}

fn finish(kind: BenchKind, cfg: &BenchConfig, inputs: &BenchInputs, store: &RecordStore) -> Result<MetricsReport> {
    let records: Vec<MetricRecord> = store
        .load()?
        .into_iter()
        .filter(|r| cfg.algorithms.contains(&r.algorithm) && r.image_index < cfg.n_images)
        .filter(|r| r.attribute.is_none_or(|a| cfg.attributes.contains(&a)))
        .collect();
    let mut report = aggregate(&records)?;
    report.metadata = serde_json::json!({
        "kind": kind,
        "code_version": CODE_VERSION,
        "config": cfg,
        "checkpoint_hash": inputs.checkpoint_hash,
        "extractor": inputs.extractor.fingerprint(),
        "dataset": inputs.dataset.descriptor(),
    });
    let dir = store.dir();
    std::fs::write(dir.join("report.json"), report.to_json()? + "\n")?;
    let mut table = report.to_table();
    if kind == BenchKind::Edit {
        table.push('\n');
        table.push_str(&supplementary_table(&report));
    }
    std::fs::write(dir.join("report.txt"), table)?;
    Ok(report)
}

fn run_bench(kind: BenchKind, cfg: &BenchConfig, inputs: &BenchInputs) -> Result<MetricsReport> {
    let dir = cfg.out_dir.join(kind.subdir());
    let store = RecordStore::open(&dir)?;
    check_stamp(&dir, &stamp(kind, cfg, inputs))?;
    store.compact()?;
    let units = pending_units(cfg, &store)?;
    let total = cfg.algorithms.len() * cfg.n_images;
    log::info!("{:?}: {} of {} units pending", kind, units.len(), total);
    match kind {
        BenchKind::Reconstruction => {
            run_units(&store, &units, cfg.effective_workers(), |u| recon_unit(cfg, inputs, &dir, u))?;
            recon_grid(cfg, inputs, &dir)?;
        }
        BenchKind::Edit => {
            run_units(&store, &units, cfg.effective_workers(), |u| edit_unit(cfg, inputs, &dir, u))?;
            edit_grids(cfg, &dir)?;
        }
    }
    finish(kind, cfg, inputs, &store)
}

/// Scores each variant's reconstruction against its input. Writes
/// `<out_dir>/recon/{records.jsonl, report.json, report.txt, grid.png}`.
pub fn run_reconstruction_bench(cfg: &BenchConfig) -> Result<MetricsReport> {
    let inputs = load_inputs(cfg, false)?;
    run_bench(BenchKind::Reconstruction, cfg, &inputs)
}

/// Scores each nonzero-alpha edit against the input image. Writes
/// `<out_dir>/edit/...` including one grid per (image, attribute).
pub fn run_edit_bench(cfg: &BenchConfig) -> Result<MetricsReport> {
    let inputs = load_inputs(cfg, true)?;
    run_bench(BenchKind::Edit, cfg, &inputs)
}
