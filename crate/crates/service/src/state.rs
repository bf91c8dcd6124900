//! Sessions, jobs and the image store behind the HTTP handlers.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use alae_core::adaptation::{adapt_decoder_with_progress, AdaptationConfig};
use alae_core::editing::edit_latent_scaled;
use alae_core::faces::Attribute;
use alae_core::inversion::{project_encoder, project_latent_opt_with_progress, project_random, LatentInit};
use alae_core::model::load_checkpoint;
use alae_core::{Autoencoder, Direction, Extractor, Image, Latent};
use axum::http::StatusCode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::ModelCache;
use crate::error::{ApiError, ServiceError};
use crate::ServiceConfig;

pub fn image_url(id: &str) -> String {
    format!("/api/v1/images/{id}")
}

fn content_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..16])
}

pub fn latent_id(w: &Latent) -> String {
    let bytes: Vec<u8> = w.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    content_id(&bytes)
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Clone, Debug, Default)]
struct Session {
    created_at: u64,
    image: Option<Arc<Image>>,
    image_id: Option<String>,
    latent: Option<Arc<Latent>>,
    latent_id: Option<String>,
    recon_image_id: Option<String>,
    adapted: bool,
    adapted_recon_id: Option<String>,
    running_job: Option<String>,
}

/// Public view of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub created_at: u64,
    pub image_id: Option<String>,
    pub latent_id: Option<String>,
    pub recon_image_id: Option<String>,
    pub adapted: bool,
    pub adapted_recon_image_id: Option<String>,
    pub running_job: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    LatentOpt,
    Adapt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobSnapshot {
    pub job_id: String,
    pub kind: JobKind,
    pub session_id: String,
    pub status: JobStatus,
    pub progress: f64,
    pub loss_curve: Vec<f64>,
    pub error: Option<String>,
    /// Set on success: ids and URLs of what the job produced.
    pub result: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertRequest {
    pub method: InvertMethod,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvertMethod {
    #[default]
    Encoder,
    LatentOpt,
    Random,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptRequest {
    pub steps: Option<usize>,
    pub step_size: Option<f64>,
    pub lambda_mse: Option<f64>,
    pub lambda_vgg: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub attribute: String,
    /// Latent-std units along the attribute direction.
    pub alpha: f64,
    #[serde(default)]
    pub use_base: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeInfo {
    pub name: String,
    pub train_accuracy: f64,
    pub latent_std: f64,
}

pub enum InvertOutcome {
    Done { latent_id: String, recon_image_id: String },
    Started { job_id: String },
}

struct Inner {
    model: Arc<Autoencoder>,
    extractor: Arc<Extractor>,
    directions: Vec<(Attribute, Direction)>,
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Session>>,
    jobs: Mutex<HashMap<String, Arc<Mutex<JobSnapshot>>>>,
    images: Mutex<HashMap<String, Arc<Vec<u8>>>>,
    cache: Mutex<ModelCache>,
    temp_spill: Option<PathBuf>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        if let Some(p) = &self.temp_spill {
            let _ = std::fs::remove_dir_all(p);
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Loads the checkpoint and every `<attribute>.json` present in the
    /// directions directory.
    pub fn load(config: ServiceConfig) -> Result<Self, ServiceError> {
        if !config.checkpoint.is_file() {
            return Err(ServiceError::Config(format!("checkpoint {} not found", config.checkpoint.display())));
        }
        let model: Autoencoder = load_checkpoint(&config.checkpoint)?;
        let mut directions = Vec::new();
        for a in Attribute::ALL {
            let p = config.directions.join(format!("{}.json", a.name()));
            if p.is_file() {
                directions.push(Direction::load(&p)?);
            }
        }
        Self::new(model, directions, config)
    }

    pub fn new(model: Autoencoder, directions: Vec<Direction>, config: ServiceConfig) -> Result<Self, ServiceError> {
        if directions.is_empty() {
            return Err(ServiceError::Config("no attribute directions found".into()));
        }
        let mut named = Vec::new();
        for d in directions {
            let a = Attribute::parse(&d.name)
                .ok_or_else(|| ServiceError::Config(format!("direction {:?} is not a known attribute", d.name)))?;
            if d.d_w != model.d_w() {
                return Err(ServiceError::Config(format!(
                    "direction {} has d_w {} but the model has {}",
                    d.name,
                    d.d_w,
                    model.d_w()
                )));
            }
            named.push((a, d));
        }
        config.adaptation.validate()?;
        config.latent_opt.validate()?;
        let (spill, temp_spill) = match &config.data_dir {
            Some(d) => (d.join("adapted"), None),
            None => {
                let d = std::env::temp_dir().join(format!("alae-service-{:016x}", rand::random::<u64>()));
                (d.clone(), Some(d))
            }
        };
        Ok(Self {
            inner: Arc::new(Inner {
                model: Arc::new(model.eval()),
                extractor: Arc::new(Extractor::new(config.extractor_seed)),
                directions: named,
                cache: Mutex::new(ModelCache::new(config.cache_capacity, &spill)),
                config,
                sessions: Mutex::new(HashMap::new()),
                jobs: Mutex::new(HashMap::new()),
                images: Mutex::new(HashMap::new()),
                temp_spill,
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn base_model(&self) -> &Autoencoder {
        &self.inner.model
    }

    fn store_image(&self, image: &Image) -> Result<String, ApiError> {
        let png = image.to_png()?;
        let id = content_id(&png);
        lock(&self.inner.images).entry(id.clone()).or_insert_with(|| Arc::new(png));
        Ok(id)
    }

    fn with_session<R>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<R, ApiError>) -> Result<R, ApiError> {
        let mut sessions = lock(&self.inner.sessions);
        let s = sessions.get_mut(id).ok_or_else(|| ApiError::not_found("session", id))?;
        f(s)
    }

    fn idle_session(&self, id: &str) -> Result<Session, ApiError> {
        self.with_session(id, |s| match &s.running_job {
            Some(j) => Err(ApiError::conflict(format!("job {j} is still running for this session"))),
            None => Ok(s.clone()),
        })
    }

    pub fn create_session(&self) -> String {
        let id = format!("{:016x}", rand::random::<u64>());
        let s = Session {
            created_at: now_secs(),
            ..Default::default()
        };
        lock(&self.inner.sessions).insert(id.clone(), s);
        id
    }

    pub fn session(&self, id: &str) -> Result<SessionView, ApiError> {
        self.with_session(id, |s| {
            Ok(SessionView {
                session_id: id.to_string(),
                created_at: s.created_at,
                image_id: s.image_id.clone(),
                latent_id: s.latent_id.clone(),
                recon_image_id: s.recon_image_id.clone(),
                adapted: s.adapted,
                adapted_recon_image_id: s.adapted_recon_id.clone(),
                running_job: s.running_job.clone(),
            })
        })
    }

    /// Decodes a PNG, resizes it to the model size and resets the session.
    pub fn put_image(&self, id: &str, png: &[u8]) -> Result<String, ApiError> {
        self.idle_session(id)?;
        let img = Image::from_png(png).map_err(|e| ApiError::unprocessable(format!("invalid PNG: {e}")))?;
        let img = img.resize(self.inner.model.image_size());
        let image_id = self.store_image(&img)?;
        let img = Arc::new(img);
        self.with_session(id, |s| {
            if s.running_job.is_some() {
                return Err(ApiError::conflict("a job started while uploading"));
            }
            *s = Session {
                created_at: s.created_at,
                image: Some(img),
                image_id: Some(image_id.clone()),
                ..Default::default()
            };
            Ok(())
        })?;
        Ok(image_id)
    }

    fn latent_update(&self, w: Latent) -> Result<SessionUpdate, ApiError> {
        let recon = self.inner.model.decode(&w)?;
        Ok(SessionUpdate::Latent {
            latent_id: latent_id(&w),
            recon_id: self.store_image(&recon)?,
            latent: w,
        })
    }

    fn apply(&self, s: &mut Session, update: SessionUpdate) -> Result<(), ApiError> {
        match update {
            SessionUpdate::Latent {
                latent,
                latent_id,
                recon_id,
            } => {
                s.latent = Some(Arc::new(latent));
                s.latent_id = Some(latent_id);
                s.recon_image_id = Some(recon_id);
                s.adapted = false;
                s.adapted_recon_id = None;
            }
            SessionUpdate::Adapted { recon_id } => {
                s.adapted = true;
                s.adapted_recon_id = Some(recon_id);
            }
        }
        Ok(())
    }

    pub fn invert(&self, id: &str, req: InvertRequest) -> Result<InvertOutcome, ApiError> {
        let s = self.idle_session(id)?;
        let image = s.image.ok_or_else(|| ApiError::conflict("upload an image first"))?;
        let model = &self.inner.model;
        match req.method {
            InvertMethod::Encoder | InvertMethod::Random => {
                let w = if req.method == InvertMethod::Encoder {
                    project_encoder(model, &image)?
                } else {
                    project_random(model, req.seed.unwrap_or(0))
                };
                let update = self.latent_update(w)?;
                let SessionUpdate::Latent { latent_id, recon_id, .. } = &update else {
                    unreachable!()
                };
                let out = InvertOutcome::Done {
                    latent_id: latent_id.clone(),
                    recon_image_id: recon_id.clone(),
                };
                self.with_session(id, |s| {
                    if s.running_job.is_some() {
                        return Err(ApiError::conflict("a job started while inverting"));
                    }
                    self.apply(s, update)
                })?;
                Ok(out)
            }
            InvertMethod::LatentOpt => {
                let mut cfg = self.inner.config.latent_opt.clone();
                cfg.init = LatentInit::Encoder;
                if let Some(n) = req.steps {
                    cfg.steps = n;
                }
                cfg.validate()?;
                let me = self.clone();
                let job_id = self.start_job(id, JobKind::LatentOpt, cfg.steps, move |progress| {
                    let r = project_latent_opt_with_progress(&me.inner.model, &image, &*me.inner.extractor, &cfg, |step, loss| {
                        progress(step, loss);
                        true
                    })?;
                    let update = me.latent_update(r.latent)?;
                    let SessionUpdate::Latent { latent_id, recon_id, .. } = &update else {
                        unreachable!()
                    };
                    let result = serde_json::json!({
                        "latent_id": latent_id,
                        "recon_image_id": recon_id,
                        "recon_image_url": image_url(recon_id),
                        "best_loss": r.best_loss,
                        "best_step": r.best_step,
                    });
                    Ok((result, update))
                })?;
                Ok(InvertOutcome::Started { job_id })
            }
        }
    }

    pub fn adapt(&self, id: &str, req: AdaptRequest) -> Result<String, ApiError> {
        let s = self.idle_session(id)?;
        let image = s.image.ok_or_else(|| ApiError::conflict("upload an image first"))?;
        let w = s.latent.ok_or_else(|| ApiError::conflict("invert the image before adapting"))?;
        let d = &self.inner.config.adaptation;
        let cfg = AdaptationConfig {
            steps: req.steps.unwrap_or(d.steps),
            step_size: req.step_size.unwrap_or(d.step_size),
            lambda_mse: req.lambda_mse.unwrap_or(d.lambda_mse),
            lambda_vgg: req.lambda_vgg.unwrap_or(d.lambda_vgg),
            seed: d.seed,
        };
        cfg.validate()?;
        let me = self.clone();
        let key = id.to_string();
        self.start_job(id, JobKind::Adapt, cfg.steps, move |progress| {
            let r = adapt_decoder_with_progress(&me.inner.model, &w, &image, &*me.inner.extractor, &cfg, |step, loss| {
                progress(step, loss);
                true
            })?;
            let recon = r.adapted_model.decode(&w)?;
            let recon_id = me.store_image(&recon)?;
            lock(&me.inner.cache).insert(&key, Arc::new(r.adapted_model))?;
            let result = serde_json::json!({
                "recon_image_id": recon_id,
                "recon_image_url": image_url(&recon_id),
                "final_loss": r.loss_curve.last(),
            });
            Ok((result, SessionUpdate::Adapted { recon_id }))
        })
    }

    /// Registers a job, marks the session busy and runs `work` on its own
    /// thread. `work` receives a `(step, loss)` progress sink.
    fn start_job<F>(&self, session_id: &str, kind: JobKind, steps: usize, work: F) -> Result<String, ApiError>
    where
        F: FnOnce(&dyn Fn(usize, f64)) -> Result<(serde_json::Value, SessionUpdate), ApiError> + Send + 'static,
    {
        let job_id = format!("{:016x}", rand::random::<u64>());
        let snap = Arc::new(Mutex::new(JobSnapshot {
            job_id: job_id.clone(),
            kind,
            session_id: session_id.to_string(),
            status: JobStatus::Queued,
            progress: 0.0,
            loss_curve: Vec::new(),
            error: None,
            result: None,
        }));
        self.with_session(session_id, |s| {
            if let Some(j) = &s.running_job {
                return Err(ApiError::conflict(format!("job {j} is still running for this session")));
            }
            s.running_job = Some(job_id.clone());
            Ok(())
        })?;
        lock(&self.inner.jobs).insert(job_id.clone(), snap.clone());
        let me = self.clone();
        let sid = session_id.to_string();
        let spawned = std::thread::Builder::new().name(format!("job-{job_id}")).spawn(move || {
            lock(&snap).status = JobStatus::Running;
            let sink = |step: usize, loss: f64| {
                let mut j = lock(&snap);
                j.loss_curve.push(loss);
                let p = ((step + 1) as f64 / (steps + 1) as f64).min(1.0);
                if p > j.progress {
                    j.progress = p;
                }
            };
            let outcome = work(&sink);
            let applied = me.with_session(&sid, |s| {
                s.running_job = None;
                match outcome {
                    Ok((result, update)) => me.apply(s, update).map(|_| result),
                    Err(e) => Err(e),
                }
            });
            let mut j = lock(&snap);
            match applied {
                Ok(result) => {
                    j.progress = 1.0;
                    j.result = Some(result);
                    j.status = JobStatus::Done;
                }
                Err(e) => {
                    log::warn!("job {} failed: {}", j.job_id, e.message);
                    j.error = Some(e.message);
                    j.status = JobStatus::Failed;
                }
            }
        });
        if let Err(e) = spawned {
            self.with_session(session_id, |s| {
                s.running_job = None;
                Ok(())
            })?;
            return Err(ApiError::internal(format!("cannot start job: {e}")));
        }
        Ok(job_id)
    }

    pub fn job(&self, id: &str) -> Result<JobSnapshot, ApiError> {
        let j = lock(&self.inner.jobs).get(id).cloned().ok_or_else(|| ApiError::not_found("job", id))?;
        let snap = lock(&j).clone();
        Ok(snap)
    }

    pub fn attributes(&self) -> Vec<AttributeInfo> {
        self.inner
            .directions
            .iter()
            .map(|(a, d)| AttributeInfo {
                name: a.name().to_string(),
                train_accuracy: d.train_accuracy,
                latent_std: d.latent_std,
            })
            .collect()
    }

    /// Decodes the session latent moved by `alpha` std units along the
    /// attribute direction, with the adapted model unless `use_base`.
    pub fn edit(&self, id: &str, req: EditRequest) -> Result<String, ApiError> {
        if !req.alpha.is_finite() {
            return Err(ApiError::unprocessable("alpha must be finite"));
        }
        let (_, direction) = self
            .inner
            .directions
            .iter()
            .find(|(a, _)| a.name() == req.attribute)
            .ok_or_else(|| ApiError::unprocessable(format!("unknown attribute {:?}", req.attribute)))?;
        let s = self.with_session(id, |s| Ok(s.clone()))?;
        let w = s.latent.ok_or_else(|| ApiError::conflict("invert the image before editing"))?;
        let model = if req.use_base {
            self.inner.model.clone()
        } else {
            if !s.adapted {
                return Err(ApiError::conflict("adapt the session first or pass use_base=true"));
            }
            lock(&self.inner.cache)
                .get(id)?
                .ok_or_else(|| ApiError::internal("adapted model missing from cache"))?
        };
        let edited = model.decode(&edit_latent_scaled(&w, direction, req.alpha)?)?;
        self.store_image(&edited)
    }

    pub fn image(&self, id: &str) -> Result<Arc<Vec<u8>>, ApiError> {
        lock(&self.inner.images).get(id).cloned().ok_or_else(|| ApiError::not_found("image", id))
    }
}

enum SessionUpdate {
    Latent {
        latent: Latent,
        latent_id: String,
        recon_id: String,
    },
    Adapted {
        recon_id: String,
    },
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}
