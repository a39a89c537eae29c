//! Run orchestration, reports and the HTTP API of the testing platform.

pub mod api;
pub mod error;
pub mod orchestrator;
pub mod report;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use probekit_core::repo::Repository;
use probekit_core::store::FileStore;
use probekit_gateway::{Gateway, GatewayConfig};
use tokio::sync::oneshot;

pub use error::{ServiceError, ServiceResult};
pub use orchestrator::Orchestrator;

/// Opens the store, registers the built-in properties and wires the orchestrator.
/// Must be called outside an async runtime because it builds the HTTP client.
pub fn build(store_dir: &Path, gateway: GatewayConfig) -> anyhow::Result<Arc<Orchestrator>> {
    let store = FileStore::open(store_dir)?;
    let repo = Repository::new(Arc::new(store));
    repo.ensure_builtin_properties()?;
    Ok(Arc::new(Orchestrator::new(repo, Gateway::new(gateway)?)))
}

/// An API server on its own thread and runtime; stops when dropped.
pub struct ApiServer {
    addr: SocketAddr,
    orchestrator: Arc<Orchestrator>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ApiServer {
    pub fn start(orchestrator: Arc<Orchestrator>, bind: SocketAddr) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind(bind)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = api::router(orchestrator.clone());
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(ApiServer {
            addr,
            orchestrator,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn orchestrator(&self) -> &Arc<Orchestrator> {
        &self.orchestrator
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ApiServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
