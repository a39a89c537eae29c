//! HTTP front end for the mock models.
//!
//! Accepted bodies: a JSON array of samples, `{"instances": [...]}` (batch
//! response `{"predictions": [{"label", "confidence"}]}`), or
//! `{"instance": x}` (response `{"prediction": {...}}`).

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use crate::mock::MockModel;

/// Fault injection for exercising retries and partial failures.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Faults {
    /// The first `fail_first` prediction requests answer HTTP 500.
    #[serde(default)]
    pub fail_first: usize,
    /// Requests whose raw body contains this text answer HTTP 500.
    #[serde(default)]
    pub fail_when_contains: Option<String>,
    /// Requests whose raw body contains this text answer HTTP 400.
    #[serde(default)]
    pub reject_when_contains: Option<String>,
    /// Requests lacking this `[name, value]` header answer HTTP 401.
    #[serde(default)]
    pub require_header: Option<[String; 2]>,
    /// Milliseconds to wait before answering each prediction request.
    #[serde(default)]
    pub delay_ms: u64,
}

struct AppState {
    model: MockModel,
    faults: Faults,
    requests: Arc<AtomicUsize>,
}

fn wire(p: probekit_core::Prediction) -> Value {
    let label: Value = if p.forecast().is_some() && p.label.starts_with('[') {
        serde_json::from_str(&p.label).unwrap_or(Value::String(p.label.clone()))
    } else {
        Value::String(p.label)
    };
    json!({"label": label, "confidence": p.confidence.unwrap_or(1.0)})
}

async fn predict(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: String,
) -> (StatusCode, Json<Value>) {
    let n = state.requests.fetch_add(1, Ordering::SeqCst);
    let f = &state.faults;
    if f.delay_ms > 0 {
        tokio::time::sleep(std::time::Duration::from_millis(f.delay_ms)).await;
    }
    if let Some([name, value]) = &f.require_header {
        if headers.get(name.as_str()).and_then(|v| v.to_str().ok()) != Some(value.as_str()) {
            return (StatusCode::UNAUTHORIZED, Json(json!({"error": "unauthorized"})));
        }
    }
    if n < f.fail_first || f.fail_when_contains.as_deref().is_some_and(|m| body.contains(m)) {
        return (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": "injected fault"})));
    }
    if f.reject_when_contains.as_deref().is_some_and(|m| body.contains(m)) {
        return (StatusCode::BAD_REQUEST, Json(json!({"error": "rejected"})));
    }
    let doc: Value = match serde_json::from_str(&body) {
        Ok(v) => v,
        Err(e) => return (StatusCode::BAD_REQUEST, Json(json!({"error": e.to_string()}))),
    };
    let (samples, single) = match &doc {
        Value::Array(items) => (items.clone(), false),
        Value::Object(map) => match (map.get("instances"), map.get("instance")) {
            (Some(Value::Array(items)), _) => (items.clone(), false),
            (None, Some(one)) => (vec![one.clone()], true),
            _ => {
                return (
                    StatusCode::BAD_REQUEST,
                    Json(json!({"error": "expected instances or instance"})),
                )
            }
        },
        _ => return (StatusCode::BAD_REQUEST, Json(json!({"error": "expected a JSON body"}))),
    };
    let mut out = Vec::with_capacity(samples.len());
    for s in &samples {
        match state.model.predict_json(s) {
            Ok(p) => out.push(wire(p)),
            Err(e) => return (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({"error": e.to_string()}))),
        }
    }
    if single {
        (StatusCode::OK, Json(json!({"prediction": out.remove(0)})))
    } else {
        (StatusCode::OK, Json(json!({"predictions": out})))
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({"status": "ok", "kind": state.model.kind()}))
}

pub fn router(model: MockModel, faults: Faults, requests: Arc<AtomicUsize>) -> Router {
    let state = Arc::new(AppState {
        model,
        faults,
        requests,
    });
    Router::new()
        .route("/", get(health).post(predict))
        .route("/predict", get(health).post(predict))
        .with_state(state)
}

/// Serves a mock model until the process is interrupted.
pub async fn serve(model: MockModel, faults: Faults, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(model, faults, Arc::new(AtomicUsize::new(0))))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// A mock model server running on its own thread; stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl MockServer {
    /// Binds an ephemeral port on 127.0.0.1.
    pub fn start(model: MockModel, faults: Faults) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let requests = Arc::new(AtomicUsize::new(0));
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(model, faults, requests.clone());
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
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
        Ok(MockServer {
            addr,
            requests,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/predict", self.addr)
    }

    /// Prediction requests received so far.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
