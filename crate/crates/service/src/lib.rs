//! HTTP API over the simulation engine: scenarios are stored, runs are
//! queued on a bounded queue and executed one at a time.

mod routes;
mod runner;
mod store;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::Router;
use tokio::net::TcpListener;

pub use runner::QUEUE_CAPACITY;
pub use store::Store;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Threads per experiment; `None` uses every core.
    pub workers: Option<usize>,
    /// Runs waiting to execute before new submissions get 409.
    pub queue_capacity: usize,
    /// Scenario and result JSON are appended here when set.
    pub data_dir: Option<PathBuf>,
    /// Built web UI, served under `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            workers: None,
            queue_capacity: QUEUE_CAPACITY,
            data_dir: None,
            static_dir: None,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub(crate) store: Arc<Store>,
    pub(crate) queue: runner::Queue,
}

/// Builds the router and starts the run executor on the current runtime.
pub fn app(config: &ServiceConfig) -> std::io::Result<Router> {
    let store = Arc::new(Store::open(config.data_dir.clone())?);
    let queue = runner::start(store.clone(), config.queue_capacity, config.workers);
    let router = routes::router(AppState { store, queue });
    Ok(match &config.static_dir {
        Some(dir) => router.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => router,
    })
}

pub async fn serve(
    listener: TcpListener,
    config: &ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let router = app(config)?;
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await
}
