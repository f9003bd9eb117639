//! HTTP side of the gateway: `/ws`, `/healthz` and static files.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::WebSocketUpgrade;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::serve::ListenerExt;
use axum::{Json, Router};
use serde_json::json;
use thiserror::Error;
use tokio::net::{lookup_host, TcpListener, TcpStream};
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;
use tower_http::services::ServeDir;
use tracing::{info, warn};
use url::Url;

use crate::pipeline::PipelineConfig;
use crate::session::{run_session, Observer};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
const HEALTH_PROBE_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub bind: SocketAddr,
    pub pipeline: PipelineConfig,
    /// Served at `/` when set; otherwise `/` answers with a short page.
    pub static_dir: Option<PathBuf>,
    pub observer: Option<Observer>,
}

impl GatewayConfig {
    pub fn new(bind: SocketAddr, pipeline: PipelineConfig) -> Self {
        Self {
            bind,
            pipeline,
            static_dir: None,
            observer: None,
        }
    }

    /// `BIND_ADDR` plus the client modules' variables.
    pub fn from_env() -> Result<Self, GatewayError> {
        let bind = std::env::var("BIND_ADDR").unwrap_or_else(|_| DEFAULT_BIND.into());
        let bind = bind
            .parse()
            .map_err(|e| GatewayError::Config(format!("BIND_ADDR {bind:?}: {e}")))?;
        Ok(Self::new(bind, PipelineConfig::from_env()))
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
}

struct AppState {
    pipeline: Arc<PipelineConfig>,
    observer: Option<Observer>,
    shutdown: CancellationToken,
    next_session: AtomicU64,
}

/// A running gateway. Dropping it does not stop the server; call `shutdown`.
pub struct Gateway {
    addr: SocketAddr,
    shutdown: CancellationToken,
    task: JoinHandle<()>,
}

impl Gateway {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn ws_url(&self) -> String {
        format!("ws://{}/ws", self.addr)
    }

    pub fn http_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stop accepting, cancel every session and wait for the server task.
    pub async fn shutdown(self) {
        self.shutdown.cancel();
        let _ = self.task.await;
    }

    /// Run until the server stops on its own (it only stops when shut down).
    pub async fn wait(self) {
        let _ = self.task.await;
    }

    pub fn shutdown_token(&self) -> CancellationToken {
        self.shutdown.clone()
    }
}

pub async fn serve(config: GatewayConfig) -> Result<Gateway, GatewayError> {
    config.pipeline.validate().map_err(GatewayError::Config)?;
    let listener = TcpListener::bind(config.bind)
        .await
        .map_err(|source| GatewayError::Bind {
            addr: config.bind,
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| GatewayError::Bind {
        addr: config.bind,
        source,
    })?;
    let shutdown = CancellationToken::new();
    let state = Arc::new(AppState {
        pipeline: Arc::new(config.pipeline),
        observer: config.observer,
        shutdown: shutdown.clone(),
        next_session: AtomicU64::new(1),
    });

    let mut router = Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/healthz", get(healthz));
    router = match config.static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router.route("/", get(index)),
    };
    let router = router.with_state(state);

    let listener = listener.tap_io(|tcp| {
        if let Err(e) = tcp.set_nodelay(true) {
            warn!("set_nodelay failed: {e}");
        }
    });
    let stop = shutdown.clone();
    let task = tokio::spawn(async move {
        let result = axum::serve(listener, router)
            .with_graceful_shutdown(async move { stop.cancelled().await })
            .await;
        if let Err(e) = result {
            warn!("gateway server stopped: {e}");
        }
    });
    info!(%addr, "gateway listening");
    Ok(Gateway { addr, shutdown, task })
}

async fn ws_upgrade(State(state): State<Arc<AppState>>, ws: WebSocketUpgrade) -> Response {
    let id = state.next_session.fetch_add(1, Ordering::Relaxed);
    let pipeline = state.pipeline.clone();
    let observer = state.observer.clone();
    let shutdown = state.shutdown.child_token();
    ws.on_upgrade(move |socket| run_session(socket, id, pipeline, observer, shutdown))
}

async fn index() -> Html<&'static str> {
    Html("<!doctype html><title>voxline</title><p>voxline gateway. Connect a client to <code>/ws</code>.</p>")
}

/// `host:port` of an endpoint URL, filling in the scheme's default port.
pub fn endpoint_authority(url: &str) -> Option<String> {
    let url = Url::parse(url).ok()?;
    let host = url.host_str()?;
    let port = url.port_or_known_default()?;
    Some(format!("{host}:{port}"))
}

async fn reachable(url: &str) -> bool {
    let Some(authority) = endpoint_authority(url) else {
        return false;
    };
    let probe = async {
        let addrs: Vec<SocketAddr> = lookup_host(&authority).await.ok()?.collect();
        for a in addrs {
            if TcpStream::connect(a).await.is_ok() {
                return Some(());
            }
        }
        None
    };
    matches!(tokio::time::timeout(HEALTH_PROBE_TIMEOUT, probe).await, Ok(Some(())))
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    let p = &state.pipeline;
    let (stt, llm, tts) = tokio::join!(
        reachable(&p.stt.endpoint_url),
        reachable(&p.agent.llm.base_url),
        reachable(&p.tts.base_url)
    );
    let ok = stt && llm && tts;
    let status = if ok {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    };
    let body = json!({
        "status": if ok { "ok" } else { "degraded" },
        "stt": stt,
        "llm": llm,
        "tts": tts,
    });
    (status, Json(body)).into_response()
}
