//! `alae` command line.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use alae_core::adaptation::adapt_decoder;
use alae_core::editing::{fit_direction, make_trajectory};
use alae_core::faces::{Attribute, SyntheticDataset};
use alae_core::inversion::{project_encoder, project_latent_opt, project_random, LatentInit, LatentOptConfig};
use alae_core::metrics::{psnr, ssim, MetricsReport};
use alae_core::model::{load_checkpoint, save_checkpoint, train_toy, ArchConfig, TrainConfig};
use alae_core::{Autoencoder, Dataset, Direction, Extractor, Image, Latent};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{run_edit_bench, run_reconstruction_bench, supplementary_table};
use crate::config::{direction_path, BenchConfig};
use crate::dataset_io::{read_dataset, write_dataset};
use crate::grid::{alpha_label, Sheet, Tile};
use crate::{config_err, Result};

#[derive(Debug, Parser)]
#[command(name = "alae", version, about = "One-shot identity-preserving latent editing on a toy style autoencoder")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON file with BenchConfig fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Single worker, fixed seeds; byte-identical outputs across runs.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InvertMethod {
    Encoder,
    Random,
    LatentOpt,
}

fn parse_attribute(s: &str) -> std::result::Result<Attribute, String> {
    Attribute::parse(s).ok_or_else(|| format!("unknown attribute {s:?} (expected age, smile or hair)"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic face dataset (PNG files plus factors.json).
    MakeDataset {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train the toy autoencoder on a dataset directory.
    TrainToy {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
    },
    /// Fit one hyperplane direction per attribute on encoded latents.
    FitDirections {
        #[arg(long)]
        dataset: PathBuf,
        /// Use only the first n images.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_delimiter = ',', value_parser = parse_attribute, default_value = "age,smile,hair")]
        attributes: Vec<Attribute>,
    },
    /// Project one image into the latent space.
    Invert {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum, default_value_t = InvertMethod::Encoder)]
        method: InvertMethod,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long, default_value_t = 0)]
        extractor_seed: u64,
    },
    /// Fine-tune the decoder on one image at a fixed latent.
    Adapt {
        #[arg(long)]
        image: PathBuf,
        /// latent.json written by `invert`.
        #[arg(long)]
        latent: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long, default_value_t = 0)]
        extractor_seed: u64,
    },
    /// Decode a latent moved along a direction at several strengths.
    Edit {
        #[arg(long)]
        latent: PathBuf,
        #[arg(long)]
        direction: PathBuf,
        /// In units of latent std along the direction.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-3,-1.5,0,1.5,3")]
        alphas: Vec<f64>,
    },
    /// Reconstruction benchmark over the selected variants.
    BenchRecon(BenchArgs),
    /// Edit benchmark over the selected variants and attributes.
    BenchEdit(BenchArgs),
    /// Print a saved report as a table.
    Report {
        /// report.json or a benchmark directory containing one.
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        directions: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 0)]
        extractor_seed: u64,
        /// Spill directory for images and adapted decoders.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub directions: Option<PathBuf>,
    #[arg(long)]
    pub n_images: Option<usize>,
}

/// Latent file written by `invert`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatentFile {
    pub values: Vec<f32>,
    #[serde(default)]
    pub method: String,
}

impl LatentFile {
    pub fn load(path: &Path) -> Result<Latent> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let f: LatentFile = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Ok(Latent::new(f.values)?)
    }
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    v.as_ref().ok_or_else(|| config_err(format!("--{flag} is required")))
}

fn read_image(path: &Path, model: &Autoencoder) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let img = Image::from_png(&bytes)?;
    let size = model.image_size();
    Ok(if img.height() != size || img.width() != size {
        log::info!("resizing {}x{} input to {size}x{size}", img.width(), img.height());
        img.resize(size)
    } else {
        img
    })
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(alae_core::Error::from)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn load_model(g: &GlobalArgs) -> Result<Autoencoder> {
    let p = required(&g.checkpoint, "checkpoint")?;
    if !p.is_file() {
        return Err(config_err(format!("checkpoint {} not found", p.display())));
    }
    Ok(load_checkpoint(p)?)
}

/// Config file, then command-line overrides.
pub fn resolve_bench_config(g: &GlobalArgs, b: &BenchArgs) -> Result<BenchConfig> {
    let mut cfg = match &g.config {
        Some(p) => BenchConfig::load(p)?,
        None => BenchConfig::default(),
    };
    if let Some(v) = &g.checkpoint {
        cfg.checkpoint = v.clone();
    }
    if let Some(v) = &g.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.workers {
        cfg.workers = v;
    }
    if g.deterministic {
        cfg.deterministic = true;
    }
    if let Some(v) = &b.dataset {
        cfg.dataset = v.clone();
    }
    if let Some(v) = &b.directions {
        cfg.directions = v.clone();
    }
    if let Some(v) = b.n_images {
        cfg.n_images = v;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let seed = g.seed.unwrap_or(0);
    match &cli.command {
        Command::MakeDataset { n, size } => {
            let out = required(&g.out, "out")?;
            let ds: Dataset = SyntheticDataset::generate(seed, *n, *size).map_err(|e| config_err(e.to_string()))?;
            write_dataset(out, &ds)?;
            println!("wrote {} images to {}", ds.len(), out.display());
        }
        Command::TrainToy {
            dataset,
            epochs,
            batch_size,
        } => {
            let out = required(&g.out, "out")?;
            let ds: Dataset = read_dataset(dataset, None)?;
            let cfg = TrainConfig {
                arch: ArchConfig::with_size(ds.size),
                epochs: *epochs,
                batch_size: *batch_size,
                ..Default::default()
            };
            cfg.arch.validate().map_err(|e| config_err(e.to_string()))?;
            let t = std::time::Instant::now();
            let outcome = train_toy(&ds, &cfg, seed)?;
            for e in &outcome.history {
                log::info!(
                    "epoch {}: pixel {:.5} reciprocity {:.5} adversarial {:.4} disc {:.4}",
                    e.epoch,
                    e.pixel_mse,
                    e.reciprocity,
                    e.adversarial,
                    e.discriminator
                );
            }
            save_checkpoint(&outcome.model.clone().eval(), out)?;
            let mut hist = out.clone().into_os_string();
            hist.push(".history.json");
            write_json(Path::new(&hist), &outcome.history)?;
            println!("trained in {:.0}s, saved {}", t.elapsed().as_secs_f64(), out.display());
        }
        Command::FitDirections { dataset, n, attributes } => {
            let out = required(&g.out, "out")?;
            let model = load_model(g)?;
            let ds: Dataset = read_dataset(dataset, *n)?;
            if ds.size != model.image_size() {
                return Err(config_err("dataset size does not match the checkpoint"));
            }
            let latents = ds.images.iter().map(|im| model.encode(im)).collect::<alae_core::Result<Vec<_>>>()?;
            std::fs::create_dir_all(out)?;
            for &a in attributes {
                let labels: Vec<bool> = ds.factors.iter().map(|f| a.label(f)).collect();
                let d = fit_direction(&latents, &labels, a.name())?;
                d.save(direction_path(out, a))?;
                println!(
                    "{a}: train accuracy {:.3}, latent std {:.4}",
                    d.train_accuracy, d.latent_std
                );
            }
        }
        Command::Invert {
            image,
            method,
            steps,
            step_size,
            extractor_seed,
        } => {
            let out = required(&g.out, "out")?;
            let model = load_model(g)?;
            let img = read_image(image, &model)?;
            std::fs::create_dir_all(out)?;
            let latent = match method {
                InvertMethod::Encoder => project_encoder(&model, &img)?,
                InvertMethod::Random => project_random(&model, seed),
                InvertMethod::LatentOpt => {
                    let d = LatentOptConfig::default();
                    let cfg = LatentOptConfig {
                        steps: steps.unwrap_or(d.steps),
                        step_size: step_size.unwrap_or(d.step_size),
                        seed,
                        init: LatentInit::Encoder,
                        ..d
                    };
                    cfg.validate().map_err(|e| config_err(e.to_string()))?;
                    let r = project_latent_opt(&model, &img, &Extractor::new(*extractor_seed), &cfg)?;
                    write_json(&out.join("curve.json"), &r.loss_curve)?;
                    r.latent
                }
            };
            let recon = model.decode(&latent)?;
            std::fs::write(out.join("recon.png"), recon.to_png()?)?;
            let name = format!("{method:?}").to_lowercase();
            write_json(
                &out.join("latent.json"),
                &LatentFile {
                    values: latent.values().to_vec(),
                    method: name,
                },
            )?;
            println!("ssim {:.4} psnr {:.2}", ssim(&img, &recon)?, psnr(&img, &recon)?);
        }
        Command::Adapt {
            image,
            latent,
            steps,
            step_size,
            extractor_seed,
        } => {
            let out = required(&g.out, "out")?;
            let model = load_model(g)?;
            let img = read_image(image, &model)?;
            let w = LatentFile::load(latent)?;
            let d = alae_core::adaptation::AdaptationConfig::default();
            let cfg = alae_core::adaptation::AdaptationConfig {
                steps: steps.unwrap_or(d.steps),
                step_size: step_size.unwrap_or(d.step_size),
                seed,
                ..d
            };
            cfg.validate().map_err(|e| config_err(e.to_string()))?;
            let r = adapt_decoder(&model, &w, &img, &Extractor::new(*extractor_seed), &cfg)?;
            std::fs::create_dir_all(out)?;
            let recon = r.adapted_model.decode(&w)?;
            std::fs::write(out.join("recon.png"), recon.to_png()?)?;
            save_checkpoint(&r.adapted_model, out.join("adapted.ckpt"))?;
            write_json(&out.join("curve.json"), &r.loss_curve)?;
            println!(
                "loss {:.5} -> {:.5}, ssim {:.4}",
                r.loss_curve[0],
                r.loss_curve.last().unwrap(),
                ssim(&img, &recon)?
            );
        }
        Command::Edit {
            latent,
            direction,
            alphas,
        } => {
            let out = required(&g.out, "out")?;
            let model = load_model(g)?;
            let w = LatentFile::load(latent)?;
            let d = Direction::load(direction).map_err(|e| config_err(format!("{}: {e}", direction.display())))?;
            let traj = make_trajectory(&model, &w, &d, alphas).map_err(|e| config_err(e.to_string()))?;
            std::fs::create_dir_all(out)?;
            for (k, im) in traj.images.iter().enumerate() {
                std::fs::write(out.join(format!("{k:02}.png")), im.to_png()?)?;
            }
            Sheet {
                col_labels: traj.alphas.iter().map(|&a| alpha_label(a)).collect(),
                rows: vec![(d.name.clone(), traj.images.iter().map(Tile::from_image).collect())],
            }
            .write(&out.join("strip.png"))?;
            println!("wrote {} frames to {}", traj.images.len(), out.display());
        }
        Command::BenchRecon(b) => {
            let cfg = resolve_bench_config(g, b)?;
            let report = run_reconstruction_bench(&cfg)?;
            print!("{}", report.to_table());
        }
        Command::BenchEdit(b) => {
            let mut cfg = resolve_bench_config(g, b)?;
            if g.config.is_none() && b.n_images.is_none() {
                cfg.n_images = 50;
            }
            let report = run_edit_bench(&cfg)?;
            print!("{}\n{}", report.to_table(), supplementary_table(&report));
        }
        Command::Report { path, json } => {
            let p = if path.is_dir() { path.join("report.json") } else { path.clone() };
            let text = std::fs::read_to_string(&p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            let report = MetricsReport::from_json(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            if *json {
                println!("{}", report.to_json()?);
            } else {
                print!("{}", report.to_table());
                if report.rows.iter().any(|r| r.attribute.is_some()) {
                    print!("\n{}", supplementary_table(&report));
                }
            }
        }
        Command::Serve {
            directions,
            host,
            port,
            extractor_seed,
            data_dir,
        } => {
            let cfg = alae_service::ServiceConfig {
                checkpoint: required(&g.checkpoint, "checkpoint")?.clone(),
                directions: directions.clone(),
                extractor_seed: *extractor_seed,
                data_dir: data_dir.clone(),
                ..Default::default()
            };
            let state = alae_service::AppState::load(cfg).map_err(|e| config_err(e.to_string()))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(alae_service::serve(state, SocketAddr::new(*host, *port)))?;
        }
    }
    Ok(())
}

/// Parses arguments, runs, and maps failures to exit codes.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

