//! HTTP side of the control plane: telemetry ingest, alert storage and
//! query, a server-sent event stream for dashboards, and a control
//! endpoint that injects scenario events into a running gateway.

pub mod store;
mod state;

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use forest_core::gateway::{AlertEvent, AlertSink, PipelineObserver, SinkError};
use forest_core::sensor::FusionWeights;
use forest_core::sim::ScenarioEvent;
use futures::Stream;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, oneshot};

pub use state::{IngestError, NodeView, ServiceState, StoredAlert, StreamItem, TelemetryAck};
pub use store::{JsonlStore, MemoryStore, Store, StoreError, StoredRecord};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Append-only log; memory only when absent.
    pub store_path: Option<PathBuf>,
    pub fusion: FusionWeights,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: DEFAULT_BIND.into(),
            store_path: None,
            fusion: FusionWeights::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("service config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("service i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// `FOREST_BIND` replaces the address; `PORT` replaces only the port.
    pub fn with_env(mut self) -> Self {
        if let Ok(bind) = std::env::var("FOREST_BIND") {
            self.bind = bind;
        }
        if let Ok(port) = std::env::var("PORT") {
            let host = self.bind.rsplit_once(':').map_or("127.0.0.1", |(h, _)| h);
            self.bind = format!("{host}:{port}");
        }
        self
    }

    pub fn open_state(&self) -> Result<ServiceState, ServiceError> {
        let store: Box<dyn Store> = match &self.store_path {
            Some(p) => Box::new(JsonlStore::open(p)?),
            None => Box::<MemoryStore>::default(),
        };
        Ok(ServiceState::open(store, self.fusion.clone())?)
    }
}

/// State shared between handlers and in-process producers.
#[derive(Clone)]
pub struct Shared {
    state: Arc<Mutex<ServiceState>>,
    control: Option<Arc<Mutex<mpsc::Sender<ScenarioEvent>>>>,
}

impl Shared {
    pub fn new(state: ServiceState, control: Option<mpsc::Sender<ScenarioEvent>>) -> Self {
        Self {
            state: Arc::new(Mutex::new(state)),
            control: control.map(|c| Arc::new(Mutex::new(c))),
        }
    }

    pub fn lock(&self) -> std::sync::MutexGuard<'_, ServiceState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Delivers alerts straight into an in-process service.
impl AlertSink for Shared {
    fn deliver(&mut self, alert: &AlertEvent) -> Result<(), SinkError> {
        self.lock()
            .add_alert(alert.clone())
            .map(|_| ())
            .map_err(|e| SinkError::Rejected(e.to_string()))
    }
}

/// Mirrors received telemetry into an in-process service.
impl PipelineObserver for Shared {
    fn on_telemetry(&mut self, _t_ms: u64, bytes: &[u8]) {
        let _ = self.lock().ingest_telemetry(bytes);
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    field: Option<String>,
}

fn error(status: StatusCode, message: String, field: Option<String>) -> Response {
    (status, Json(ErrorBody { error: message, field })).into_response()
}

async fn post_telemetry(State(s): State<Shared>, body: Bytes) -> Response {
    let result = s.lock().ingest_telemetry(&body);
    match result {
        Ok(ack) => Json(ack).into_response(),
        Err(e @ IngestError::Store(_)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
        Err(e) => {
            let field = e.field();
            error(StatusCode::BAD_REQUEST, e.to_string(), field)
        }
    }
}

async fn post_alert(State(s): State<Shared>, body: Bytes) -> Response {
    let alert: AlertEvent = match serde_json::from_slice(&body) {
        Ok(a) => a,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string(), None),
    };
    let result = s.lock().add_alert(alert);
    match result {
        Ok(stored) => (StatusCode::CREATED, Json(stored)).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

#[derive(Deserialize)]
struct SinceQuery {
    since_id: Option<u64>,
}

async fn get_alerts(State(s): State<Shared>, Query(q): Query<SinceQuery>) -> Json<Vec<StoredAlert>> {
    Json(s.lock().alerts_since(q.since_id))
}

async fn get_nodes(State(s): State<Shared>) -> Json<Vec<NodeView>> {
    Json(s.lock().nodes())
}

async fn post_control(State(s): State<Shared>, body: Bytes) -> Response {
    let event: ScenarioEvent = match serde_json::from_slice(&body) {
        Ok(e) => e,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string(), None),
    };
    let Some(control) = &s.control else {
        return error(
            StatusCode::SERVICE_UNAVAILABLE,
            "no live gateway attached".into(),
            None,
        );
    };
    let sent = control.lock().unwrap_or_else(|e| e.into_inner()).send(event.clone());
    match sent {
        Ok(()) => (StatusCode::ACCEPTED, Json(event)).into_response(),
        Err(_) => error(StatusCode::SERVICE_UNAVAILABLE, "gateway has stopped".into(), None),
    }
}

async fn get_stream(State(s): State<Shared>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = s.lock().subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(item) => {
                    let ev = Event::default()
                        .id(item.seq.to_string())
                        .event(item.kind.clone())
                        .data(item.data.to_string());
                    return Some((Ok(ev), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(shared: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/telemetry", post(post_telemetry))
        .route("/alerts", post(post_alert).get(get_alerts))
        .route("/nodes", get(get_nodes))
        .route("/stream", get(get_stream))
        .route("/control/event", post(post_control))
        .with_state(shared)
}

/// A server running on its own thread and runtime.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    pub shared: Shared,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

/// Bind and serve in the background; returns once the socket is listening.
pub fn spawn(
    config: &ServiceConfig,
    control: Option<mpsc::Sender<ScenarioEvent>>,
) -> Result<ServiceHandle, ServiceError> {
    let shared = Shared::new(config.open_state()?, control);
    let listener = std::net::TcpListener::bind(&config.bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(shared.clone());
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("tokio runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
            // Not graceful: open streams never finish on their own.
            tokio::select! {
                _ = axum::serve(listener, app) => {}
                _ = rx => {}
            }
        });
        rt.shutdown_timeout(std::time::Duration::from_millis(100));
    });
    Ok(ServiceHandle {
        addr,
        shared,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Park the calling thread until SIGINT.
pub fn block_until_ctrl_c() -> std::io::Result<()> {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()?
        .block_on(tokio::signal::ctrl_c())
}
