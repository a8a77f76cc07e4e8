use std::collections::BTreeMap;
use std::future::Future;
use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use vehicle_acoustics::pipeline::{label_name, Classifier};
use vehicle_acoustics::Error;

use crate::args::ServeArgs;
use crate::config::FileConfig;
use crate::error::CliError;

pub const MAX_BODY_BYTES: usize = 10 * 1024 * 1024;
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub label: String,
    pub confidence: f64,
    pub probabilities: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

pub fn router(classifier: Arc<Classifier>) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(classifier)
}

async fn health() -> &'static str {
    "ok"
}

async fn predict(State(classifier): State<Arc<Classifier>>, body: Bytes) -> Response {
    let result = tokio::task::spawn_blocking(move || classifier.classify_wav_bytes(&body)).await;
    match result {
        Ok(Ok(p)) => {
            let probabilities = p.probabilities.iter().enumerate().map(|(i, &v)| (label_name(i).to_string(), v)).collect();
            Json(PredictResponse {
                label: label_name(p.label).to_string(),
                confidence: p.confidence,
                probabilities,
            })
            .into_response()
        }
        Ok(Err(e)) => {
            let status = match e {
                Error::MalformedWav(_) | Error::UnsupportedEncoding(_) | Error::EmptyClip | Error::ClipTooShort { .. } => {
                    StatusCode::BAD_REQUEST
                }
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            };
            (status, Json(ErrorBody { error: e.to_string() })).into_response()
        }
        Err(join) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(ErrorBody {
                error: format!("prediction task failed: {join}"),
            }),
        )
            .into_response(),
    }
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_until(listener: TcpListener, classifier: Arc<Classifier>, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(classifier)).with_graceful_shutdown(shutdown).await
}

fn resolve(bind: &str) -> Result<SocketAddr, CliError> {
    bind.to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| CliError::Usage(format!("cannot parse listen address `{bind}`")))
}

pub fn cmd_serve(args: &ServeArgs, file: &FileConfig, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let bind = args.bind.clone().or_else(|| file.serve.bind.clone()).unwrap_or_else(|| DEFAULT_BIND.to_string());
    let addr = resolve(&bind)?;
    let classifier = Arc::new(Classifier::from_checkpoint(&args.model).map_err(|e| CliError::Predict(e.to_string()))?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failed(format!("cannot start runtime: {e}")))?;
    rt.block_on(async {
        let listener = TcpListener::bind(addr).await.map_err(|source| CliError::Bind { addr, source })?;
        let local = listener.local_addr().map_err(|source| CliError::Bind { addr, source })?;
        let _ = writeln!(out, "listening on http://{local}");
        let _ = out.flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve_until(listener, classifier, shutdown)
            .await
            .map_err(|e| CliError::Failed(format!("server error: {e}")))
    })
}

/// A server running on its own thread and runtime, stopped on drop.
pub struct BackgroundServer {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(classifier: Arc<Classifier>, addr: SocketAddr) -> Result<Self, CliError> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(|e| CliError::Failed(format!("cannot start runtime: {e}")))?;
        let listener = rt.block_on(TcpListener::bind(addr)).map_err(|source| CliError::Bind { addr, source })?;
        let local = listener.local_addr().map_err(|source| CliError::Bind { addr, source })?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let _ = rt.block_on(serve_until(listener, classifier, async {
                let _ = rx.await;
            }));
        });
        Ok(Self {
            addr: local,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
