//! HTTP API for interactive one-shot editing: upload an image, project it,
//! adapt a private decoder copy, then edit along attribute directions.
//!
//! All routes live under `/api/v1`. Latent and image ids are content hashes,
//! so equal payloads get equal ids.

mod api;
pub mod cache;
pub mod error;
pub mod state;

use std::net::SocketAddr;
use std::path::PathBuf;

use alae_core::adaptation::AdaptationConfig;
use alae_core::inversion::LatentOptConfig;

pub use api::router;
pub use error::{ApiError, ServiceError};
pub use state::{AppState, JobKind, JobSnapshot, JobStatus};

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub checkpoint: PathBuf,
    /// Directory of `<attribute>.json` direction files.
    pub directions: PathBuf,
    pub extractor_seed: u64,
    /// Where evicted adapted models go; a per-process temp dir when `None`.
    pub data_dir: Option<PathBuf>,
    pub cache_capacity: usize,
    pub max_upload_bytes: usize,
    /// Defaults for adapt requests that leave fields out.
    pub adaptation: AdaptationConfig,
    pub latent_opt: LatentOptConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("toy.ckpt"),
            directions: PathBuf::from("directions"),
            extractor_seed: 0,
            data_dir: None,
            cache_capacity: 8,
            max_upload_bytes: 4 << 20,
            adaptation: AdaptationConfig::default(),
            latent_opt: LatentOptConfig::default(),
        }
    }
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
