//! Axum front end: `/ws`, `/healthz`, `/model.json` and optional static
//! assets. One task runs the control loop; each socket gets a reader and a
//! writer task that talk to it over channels.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;
use wholebody::{RobotModel, WbcParams};

use crate::control::ControlLoop;
use crate::protocol::{parse_command, CommandMessage, Role, ServerMessage};

pub const DEFAULT_TICK: Duration = Duration::from_millis(100);

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub model: RobotModel,
    pub params: WbcParams,
    pub tick_period: Duration,
    pub record_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
    /// Per-client backlog of state messages; older ones are dropped first.
    pub client_queue: usize,
}

impl ServiceConfig {
    pub fn new(model: RobotModel, params: WbcParams) -> Self {
        ServiceConfig {
            model,
            params,
            tick_period: DEFAULT_TICK,
            record_dir: PathBuf::from("recordings"),
            static_dir: None,
            client_queue: 32,
        }
    }
}

struct Envelope {
    session: u64,
    cmd: CommandMessage,
    reply: mpsc::UnboundedSender<ServerMessage>,
}

struct Shared {
    commands: mpsc::UnboundedSender<Envelope>,
    states: broadcast::Sender<Arc<str>>,
    controller: Mutex<Option<u64>>,
    sessions: Mutex<HashMap<u64, mpsc::UnboundedSender<ServerMessage>>>,
    next_session: AtomicU64,
    model_name: String,
    model_json: String,
    params_hash: String,
}

impl Shared {
    fn is_controller(&self, session: u64) -> bool {
        *self.controller.lock().unwrap() == Some(session)
    }
}

/// A running service. Dropping it does not stop the server; call
/// [`ServiceHandle::shutdown`].
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: watch::Sender<bool>,
    server: JoinHandle<std::io::Result<()>>,
    control: JoinHandle<()>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections, closes any active recording and waits
    /// for both tasks.
    pub async fn shutdown(self) -> std::io::Result<()> {
        let _ = self.stop.send(true);
        let _ = self.control.await;
        self.server.await.map_err(std::io::Error::other)?
    }

    /// Waits until the server stops.
    pub async fn wait(self) -> std::io::Result<()> {
        let r = self.server.await.map_err(std::io::Error::other)?;
        let _ = self.stop.send(true);
        let _ = self.control.await;
        r
    }
}

/// Starts the service on an already bound listener.
pub async fn start(config: ServiceConfig, listener: TcpListener) -> wholebody::Result<ServiceHandle> {
    let addr = listener.local_addr().map_err(|e| wholebody::Error::Io { path: "listener".into(), source: e })?;
    let model = Arc::new(config.model);
    let control = ControlLoop::new(model.clone(), config.params.clone(), config.record_dir.clone())?;
    let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
    let (state_tx, _) = broadcast::channel(config.client_queue.max(1));
    let (stop_tx, stop_rx) = watch::channel(false);
    let shared = Arc::new(Shared {
        commands: cmd_tx,
        states: state_tx.clone(),
        controller: Mutex::new(None),
        sessions: Mutex::new(HashMap::new()),
        next_session: AtomicU64::new(1),
        model_name: model.name.clone(),
        model_json: serde_json::to_string_pretty(model.document())?,
        params_hash: config.params.hash(),
    });

    let control = tokio::spawn(control_task(control, config.tick_period, cmd_rx, state_tx, shared.clone(), stop_rx.clone()));

    let mut app = Router::new()
        .route("/ws", get(ws_handler))
        .route("/healthz", get(healthz))
        .route("/model.json", get(model_json))
        .with_state(shared);
    if let Some(dir) = config.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let mut stop = stop_rx;
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stop.wait_for(|s| *s).await;
            })
            .await
    });
    tracing::info!(%addr, "service listening");
    Ok(ServiceHandle { addr, stop: stop_tx, server, control })
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> wholebody::Result<()> {
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| wholebody::Error::Io { path: addr.to_string().into(), source: e })?;
    let handle = start(config, listener).await?;
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutting down");
    handle
        .shutdown()
        .await
        .map_err(|e| wholebody::Error::Io { path: "server".into(), source: e })
}

async fn control_task(
    mut control: ControlLoop,
    period: Duration,
    mut commands: mpsc::UnboundedReceiver<Envelope>,
    states: broadcast::Sender<Arc<str>>,
    shared: Arc<Shared>,
    mut stop: watch::Receiver<bool>,
) {
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = interval.tick() => {}
            _ = stop.wait_for(|s| *s) => break,
        }
        while let Ok(env) = commands.try_recv() {
            // Commands queued by a controller that has since been replaced.
            if !shared.is_controller(env.session) {
                let _ = env.reply.send(ServerMessage::error("not the controller"));
                continue;
            }
            for reply in control.apply(env.cmd) {
                let _ = env.reply.send(reply);
            }
        }
        let msg = ServerMessage::State(control.tick()).to_json();
        // No receivers is fine; lagging receivers lose their oldest messages.
        let _ = states.send(msg.into());
    }
    if let Err(e) = control.stop_recording() {
        tracing::warn!("closing recording: {e}");
    }
}

async fn healthz(State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    Json(serde_json::json!({
        "status": "ok",
        "model": shared.model_name,
        "params_hash": shared.params_hash,
    }))
}

async fn model_json(State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], shared.model_json.clone())
}

#[derive(Debug, Deserialize)]
struct WsQuery {
    #[serde(default)]
    role: Option<Role>,
    #[serde(default)]
    takeover: bool,
}

async fn ws_handler(ws: WebSocketUpgrade, Query(q): Query<WsQuery>, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    let role = q.role.unwrap_or(Role::Observer);
    ws.on_upgrade(move |socket| session(socket, role, q.takeover, shared))
}

async fn session(socket: WebSocket, role: Role, takeover: bool, shared: Arc<Shared>) {
    let id = shared.next_session.fetch_add(1, Ordering::Relaxed);
    let (mut sink, mut stream) = socket.split();
    let hello = |role| ServerMessage::Hello {
        session: id,
        role,
        model: shared.model_name.clone(),
        params_hash: shared.params_hash.clone(),
    };

    if role == Role::Controller {
        let previous = {
            let mut c = shared.controller.lock().unwrap();
            match *c {
                Some(other) if !takeover => Err(other),
                prev => {
                    *c = Some(id);
                    Ok(prev)
                }
            }
        };
        match previous {
            Err(other) => {
                tracing::info!(session = id, holder = other, "controller busy");
                let _ = sink.send(text(&ServerMessage::error("controller busy"))).await;
                let _ = sink.close().await;
                return;
            }
            Ok(Some(prev)) => {
                tracing::info!(session = id, previous = prev, "controller taken over");
                if let Some(tx) = shared.sessions.lock().unwrap().get(&prev) {
                    let _ = tx.send(ServerMessage::error("controller taken over"));
                }
            }
            Ok(None) => {}
        }
    }

    let (reply_tx, mut reply_rx) = mpsc::unbounded_channel::<ServerMessage>();
    shared.sessions.lock().unwrap().insert(id, reply_tx.clone());
    let mut states = shared.states.subscribe();
    if sink.send(text(&hello(role))).await.is_err() {
        cleanup(&shared, id);
        return;
    }

    let writer = tokio::spawn(async move {
        loop {
            let msg = tokio::select! {
                r = reply_rx.recv() => match r {
                    Some(m) => Message::Text(m.to_json().into()),
                    None => break,
                },
                s = states.recv() => match s {
                    Ok(json) => Message::Text((*json).into()),
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        tracing::debug!(session = id, dropped = n, "slow client");
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                },
            };
            if sink.send(msg).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    while let Some(Ok(msg)) = stream.next().await {
        let body = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => match String::from_utf8(b.to_vec()) {
                Ok(s) => s,
                Err(_) => {
                    let _ = reply_tx.send(ServerMessage::error("binary frames must be UTF-8 JSON"));
                    continue;
                }
            },
            Message::Close(_) => break,
            _ => continue,
        };
        // Line-delimited: a frame may carry several commands.
        for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let cmd = match parse_command(line) {
                Ok(c) => c,
                Err(e) => {
                    let _ = reply_tx.send(ServerMessage::error(e));
                    continue;
                }
            };
            if !shared.is_controller(id) {
                let _ = reply_tx.send(ServerMessage::error(format!("{} requires the controller role", cmd.kind())));
                continue;
            }
            let env = Envelope { session: id, cmd, reply: reply_tx.clone() };
            if shared.commands.send(env).is_err() {
                break;
            }
        }
    }
    cleanup(&shared, id);
    drop(reply_tx);
    writer.abort();
}

fn cleanup(shared: &Shared, id: u64) {
    shared.sessions.lock().unwrap().remove(&id);
    let mut c = shared.controller.lock().unwrap();
    if *c == Some(id) {
        *c = None;
    }
}

fn text(m: &ServerMessage) -> Message {
    Message::Text(m.to_json().into())
}
