//! HTTP backend: volume upload, slice rendering and sliding-window
//! segmentation over the core library.
//!
//! Requests are served concurrently; segmentation jobs run one at a time on
//! a dedicated worker thread in FIFO order.

use std::net::SocketAddr;
use std::path::PathBuf;
use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use tower_http::cors::CorsLayer;

mod error;
mod handlers;
mod render;
mod state;

pub use error::ApiError;
pub use render::{mask_slice_png, slice_png, Axis, PALETTE};
pub use state::{AppState, JobState, SegmentRequest, SegmentationJob, VolumeMeta};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Runtime settings, normally read from the environment.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Uploaded volumes and produced masks are also written here when set.
    pub spool_dir: Option<PathBuf>,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8000)),
            spool_dir: None,
            max_upload_bytes: 1 << 30,
        }
    }
}

impl ServiceConfig {
    /// `VOXKIT_BIND`, `VOXKIT_SPOOL_DIR`, `VOXKIT_MAX_UPLOAD_BYTES`.
    pub fn from_env() -> Result<Self, String> {
        let mut c = ServiceConfig::default();
        if let Ok(b) = std::env::var("VOXKIT_BIND") {
            c.bind = b.parse().map_err(|e| format!("VOXKIT_BIND={b}: {e}"))?;
        }
        if let Ok(d) = std::env::var("VOXKIT_SPOOL_DIR") {
            c.spool_dir = Some(PathBuf::from(d));
        }
        if let Ok(m) = std::env::var("VOXKIT_MAX_UPLOAD_BYTES") {
            c.max_upload_bytes = m.parse().map_err(|e| format!("VOXKIT_MAX_UPLOAD_BYTES={m}: {e}"))?;
        }
        Ok(c)
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.max_upload_bytes();
    Router::new()
        .route("/health", get(handlers::health))
        .route("/volumes", post(handlers::upload))
        .route("/volumes/{id}", get(handlers::volume_meta))
        .route("/volumes/{id}/slice", get(handlers::volume_slice))
        .route("/volumes/{id}/segment", post(handlers::segment))
        .route("/jobs/{id}", get(handlers::job))
        .route("/masks/{id}", get(handlers::mask))
        .route("/masks/{id}/slice", get(handlers::mask_slice))
        .layer(DefaultBodyLimit::max(limit))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `config.bind`, reports the bound address through `on_bind`, and
/// serves until `shutdown` resolves.
pub async fn serve_with_shutdown(
    config: ServiceConfig,
    on_bind: impl FnOnce(SocketAddr),
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Some(dir) = &config.spool_dir {
        std::fs::create_dir_all(dir)?;
    }
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    let addr = listener.local_addr()?;
    let state = AppState::new(config);
    on_bind(addr);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    serve_with_shutdown(
        config,
        |addr| log::info!("listening on http://{addr}"),
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
    )
    .await
}
