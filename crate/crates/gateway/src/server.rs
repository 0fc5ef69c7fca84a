//! WebSocket front end around an [`Engine`].
//!
//! All state changes go through one command queue drained at tick
//! boundaries. Batches are broadcast as shared immutable values; each
//! connection wraps them in its own sequence numbers. A connection that
//! falls behind the broadcast buffer, stalls on a send, or stops answering
//! pings is dropped without affecting the loop.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use tokio::sync::{broadcast, watch};
use tokio::task::JoinHandle;
use vsl_core::log::LoopMode;
use vsl_core::CorridorConfig;

use crate::engine::Engine;
use crate::error::GatewayError;
use crate::protocol::{parse_message, Ack, Body, ErrorCode, ErrorPayload, Heartbeat, SnapshotPayload, WireMessage};
use crate::state::{validate, Command};

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listen: SocketAddr,
    pub token: String,
    pub log_dir: PathBuf,
    pub tick_interval: Duration,
    /// Broadcast messages a client may fall behind before it is dropped.
    pub client_buffer: usize,
    /// Silence (no frames, no pongs) after which a client is dropped; also
    /// the limit on a single send.
    pub client_timeout: Duration,
    pub heartbeat_interval: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8765)),
            token: String::new(),
            log_dir: PathBuf::from("logs"),
            tick_interval: Duration::from_secs(30),
            client_buffer: 64,
            client_timeout: Duration::from_secs(60),
            heartbeat_interval: Duration::from_secs(10),
        }
    }
}

impl GatewayConfig {
    /// Reads `VSL_LISTEN`, `VSL_TOKEN` (required) and `VSL_LOG_DIR`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let mut cfg = GatewayConfig::default();
        if let Ok(v) = std::env::var("VSL_LISTEN") {
            cfg.listen = v.parse().map_err(|e| GatewayError::Env { name: "VSL_LISTEN", reason: format!("{e}") })?;
        }
        cfg.token = std::env::var("VSL_TOKEN")
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or(GatewayError::Env { name: "VSL_TOKEN", reason: "must be set".into() })?;
        if let Ok(v) = std::env::var("VSL_LOG_DIR") {
            cfg.log_dir = PathBuf::from(v);
        }
        Ok(cfg)
    }
}

struct CommandQueue {
    pending: Vec<Command>,
    /// Tick at which the pending commands take effect.
    applies_at: u64,
    /// Simulation time of the last completed tick.
    now_s: f64,
}

struct Shared {
    token: String,
    corridor: CorridorConfig,
    mode: LoopMode,
    queue: Mutex<CommandQueue>,
    snapshot: RwLock<SnapshotPayload>,
    tx: broadcast::Sender<Arc<Body>>,
    clients: AtomicUsize,
    client_timeout: Duration,
    heartbeat_interval: Duration,
}

impl Shared {
    fn snapshot(&self) -> SnapshotPayload {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

pub struct GatewayHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    control: Option<JoinHandle<Result<u64, GatewayError>>>,
    server: JoinHandle<()>,
    stop: watch::Sender<bool>,
}

impl GatewayHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn snapshot(&self) -> SnapshotPayload {
        self.shared.snapshot()
    }

    pub fn clients(&self) -> usize {
        self.shared.clients.load(Ordering::SeqCst)
    }

    /// Waits until the feed is exhausted; returns the last tick.
    pub async fn loop_finished(&mut self) -> Result<u64, GatewayError> {
        let Some(h) = self.control.as_mut() else {
            return Ok(self.shared.snapshot().tick);
        };
        let result = h.await.expect("control loop panicked");
        self.control = None;
        result
    }

    /// Stops the loop after the tick in progress and closes the listener.
    pub async fn shutdown(mut self) -> Result<u64, GatewayError> {
        let _ = self.stop.send(true);
        let last = self.loop_finished().await;
        self.server.abort();
        last
    }
}

/// Binds the listener and starts the control loop and the server.
pub async fn start(engine: Engine, cfg: &GatewayConfig) -> Result<GatewayHandle, GatewayError> {
    let snapshot = engine.snapshot();
    let (tx, _) = broadcast::channel(cfg.client_buffer.max(1));
    let shared = Arc::new(Shared {
        token: cfg.token.clone(),
        corridor: engine.corridor().clone(),
        mode: engine.mode(),
        queue: Mutex::new(CommandQueue { pending: Vec::new(), applies_at: snapshot.tick + 1, now_s: snapshot.t_s }),
        snapshot: RwLock::new(snapshot),
        tx,
        clients: AtomicUsize::new(0),
        client_timeout: cfg.client_timeout,
        heartbeat_interval: cfg.heartbeat_interval,
    });
    let listener = tokio::net::TcpListener::bind(cfg.listen).await?;
    let addr = listener.local_addr()?;
    let app = router(shared.clone());
    let server = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    let (stop, stop_rx) = watch::channel(false);
    let control = tokio::spawn(control_loop(engine, shared.clone(), cfg.tick_interval, stop_rx));
    tracing::info!(%addr, "gateway listening");
    Ok(GatewayHandle { addr, shared, control: Some(control), server, stop })
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/ws", get(ws_handler))
        .route("/snapshot", get(snapshot_handler))
        .route("/health", get(|| async { "ok" }))
        .with_state(shared)
}

async fn control_loop(
    mut engine: Engine,
    shared: Arc<Shared>,
    interval: Duration,
    mut stop: watch::Receiver<bool>,
) -> Result<u64, GatewayError> {
    let mut ticker = tokio::time::interval(interval);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    ticker.tick().await;
    loop {
        tokio::select! {
            _ = ticker.tick() => {}
            _ = stop.changed() => break,
        }
        if engine.is_finished() {
            break;
        }
        let commands = {
            let mut q = shared.queue.lock().expect("queue lock");
            q.applies_at += 1;
            std::mem::take(&mut q.pending)
        };
        let (back, result) = tokio::task::spawn_blocking(move || {
            let r = engine.step(commands);
            (engine, r)
        })
        .await
        .expect("tick panicked");
        engine = back;
        let Some(report) = result? else { break };
        let tick = report.decisions.tick;
        let degraded = report.decisions.degraded;
        *shared.snapshot.write().expect("snapshot lock") = engine.snapshot();
        shared.queue.lock().expect("queue lock").now_s = engine.time_s();
        // send fails only when nobody is subscribed
        let _ = shared.tx.send(Arc::new(Body::SensorBatch(report.sensors)));
        let _ = shared.tx.send(Arc::new(Body::DecisionBatch(report.decisions)));
        if degraded {
            let reason = format!("tick {tick}: no fresh sensor data, posting maximum limits");
            let _ = shared.tx.send(Arc::new(Body::Error(ErrorPayload::new(None, ErrorCode::Degraded, reason))));
        }
    }
    Ok(engine.tick())
}

#[derive(Debug, Deserialize)]
struct TokenQuery {
    #[serde(default)]
    token: String,
}

async fn snapshot_handler(Query(q): Query<TokenQuery>, State(shared): State<Arc<Shared>>) -> Response {
    if q.token != shared.token {
        return (StatusCode::UNAUTHORIZED, "invalid token").into_response();
    }
    Json(shared.snapshot()).into_response()
}

async fn ws_handler(ws: WebSocketUpgrade, Query(q): Query<TokenQuery>, State(shared): State<Arc<Shared>>) -> Response {
    if q.token != shared.token {
        return (StatusCode::UNAUTHORIZED, "invalid token").into_response();
    }
    ws.on_upgrade(move |socket| client(socket, shared))
}

fn batch_tick(body: &Body) -> Option<u64> {
    match body {
        Body::SensorBatch(b) => Some(b.tick),
        Body::DecisionBatch(b) => Some(b.tick),
        _ => None,
    }
}

struct Outbox {
    seq: u64,
    timeout: Duration,
}

impl Outbox {
    async fn send<S>(&mut self, sink: &mut S, body: &Body) -> bool
    where
        S: futures_util::Sink<Message> + Unpin,
    {
        self.seq += 1;
        let msg = WireMessage::new(self.seq, body.clone());
        let text = match serde_json::to_string(&msg) {
            Ok(t) => t,
            Err(e) => {
                tracing::error!(error = %e, "unserialisable message");
                return false;
            }
        };
        matches!(tokio::time::timeout(self.timeout, sink.send(Message::Text(text.into()))).await, Ok(Ok(())))
    }
}

async fn client(socket: WebSocket, shared: Arc<Shared>) {
    shared.clients.fetch_add(1, Ordering::SeqCst);
    let mut rx = shared.tx.subscribe();
    let snapshot = shared.snapshot();
    let seen = snapshot.tick;
    let (mut sink, mut stream) = socket.split();
    let mut out = Outbox { seq: 0, timeout: shared.client_timeout };
    let mut last_in: Option<u64> = None;
    let mut last_heard = Instant::now();
    let mut heartbeat = tokio::time::interval(shared.heartbeat_interval);
    heartbeat.tick().await;

    if out.send(&mut sink, &Body::Snapshot(Box::new(snapshot))).await {
        loop {
            tokio::select! {
                frame = stream.next() => {
                    let Some(Ok(frame)) = frame else { break };
                    last_heard = Instant::now();
                    let reply = match frame {
                        Message::Text(text) => handle_text(text.as_str(), &shared, &mut last_in),
                        Message::Binary(_) => Some(Body::Error(ErrorPayload::new(None, ErrorCode::Malformed, "binary frames are not accepted"))),
                        Message::Close(_) => break,
                        _ => None,
                    };
                    if let Some(body) = reply {
                        if !out.send(&mut sink, &body).await {
                            break;
                        }
                    }
                }
                item = rx.recv() => match item {
                    Ok(body) => {
                        if batch_tick(&body).is_some_and(|t| t <= seen) {
                            continue;
                        }
                        if !out.send(&mut sink, &body).await {
                            break;
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        let e = ErrorPayload::new(None, ErrorCode::SlowClient, format!("{n} messages behind; disconnecting"));
                        let _ = out.send(&mut sink, &Body::Error(e)).await;
                        break;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                _ = heartbeat.tick() => {
                    if last_heard.elapsed() > shared.client_timeout {
                        break;
                    }
                    let tick = shared.snapshot.read().expect("snapshot lock").tick;
                    let ping = tokio::time::timeout(shared.client_timeout, sink.send(Message::Ping(Vec::new().into()))).await;
                    if !matches!(ping, Ok(Ok(()))) || !out.send(&mut sink, &Body::Heartbeat(Heartbeat { tick: Some(tick) })).await {
                        break;
                    }
                }
            }
        }
    }
    let _ = tokio::time::timeout(Duration::from_millis(100), sink.close()).await;
    shared.clients.fetch_sub(1, Ordering::SeqCst);
}

/// Returns the reply for a client frame; heartbeats get none.
fn handle_text(text: &str, shared: &Shared, last_in: &mut Option<u64>) -> Option<Body> {
    let msg = match parse_message(text) {
        Ok(m) => m,
        Err(e) => return Some(Body::Error(e)),
    };
    if last_in.is_some_and(|prev| msg.seq <= prev) {
        let reason = format!("seq {} does not exceed {}", msg.seq, last_in.unwrap_or(0));
        return Some(Body::Error(ErrorPayload::new(Some(msg.seq), ErrorCode::BadSequence, reason)));
    }
    *last_in = Some(msg.seq);
    if matches!(msg.body, Body::Heartbeat(_)) {
        return None;
    }
    let mut q = shared.queue.lock().expect("queue lock");
    match validate(&msg.body, &shared.corridor, shared.mode, msg.seq, q.now_s) {
        Ok(cmd) => {
            q.pending.push(cmd);
            Some(Body::Ack(Ack { ack_seq: msg.seq, applies_at_tick: q.applies_at }))
        }
        Err((code, reason)) => Some(Body::Error(ErrorPayload::new(Some(msg.seq), code, reason))),
    }
}
