//! Websocket service hosting teleoperation sessions.
//!
//! `GET /session/{id}` upgrades to a websocket bound to session `id`,
//! creating it on first use (`?task=<task_id>` picks its task; the server
//! default otherwise). Each session has one physics task that owns it, one
//! operator at a time and one writer thread for its files.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::sync::{broadcast, watch};
use tokio::task::JoinHandle;

use handover::bilateral::GainProfile;
use handover::dataset::{self, Dataset, DatasetManifest, Source, Transition, DATASET_SCHEMA_VERSION};
use handover::env::Env;
use handover::policy::Policy;
use handover::sim::TaskId;
use handover::{Error, Result};

use crate::protocol::{parse_client, ClientFrame, Command, ServerFrame, PROTOCOL_VERSION};
use crate::queue::EventQueue;
use crate::session::{SaveRequest, Session, SessionConfig};
use crate::transcript::{replay, Transcript};

/// How long a new connection has to send its HELLO.
pub const HELLO_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: String,
    /// Task of sessions opened without `?task=`.
    pub env: Env,
    pub gains: GainProfile,
    /// Used by sessions whose task matches its dimensions.
    pub policy: Option<Policy>,
    pub seed: u64,
    pub physics_hz: f64,
    pub snapshot_hz: f64,
    /// Each session writes into `data_dir/<id>/`.
    pub data_dir: PathBuf,
    /// Keep a transcript of every session.
    pub record: bool,
    /// Copied into dataset manifests.
    pub config_hash: String,
}

impl ServerConfig {
    pub fn snapshot_every(&self) -> u64 {
        ((self.physics_hz / self.snapshot_hz).round() as u64).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.physics_hz > 0.0 && self.snapshot_hz > 0.0 && self.snapshot_hz <= self.physics_hz) {
            return Err(Error::Config("rates must be positive with snapshot_hz <= physics_hz".into()));
        }
        self.session_config("check", self.env.clone()).validate()
    }

    /// Environment for sessions running `task`.
    pub fn env_for(&self, task: TaskId) -> Env {
        if task == self.env.task() {
            self.env.clone()
        } else {
            Env::new(handover::sim::TaskSpec::preset(task), self.env.arm.clone())
        }
    }

    /// Configuration a session `id` on `task` runs with.
    pub fn session_config_for(&self, id: &str, task: TaskId) -> SessionConfig {
        self.session_config(id, self.env_for(task))
    }

    fn session_config(&self, id: &str, env: Env) -> SessionConfig {
        let policy = self
            .policy
            .clone()
            .filter(|p| p.obs_dim == env.obs_dim() && p.act_dim == env.action_dim());
        SessionConfig {
            id: id.to_string(),
            gains: if env.arm == self.env.arm {
                self.gains.clone()
            } else {
                GainProfile::defaults_for(&env.arm)
            },
            env,
            policy,
            seed: self.seed,
            snapshot_every: self.snapshot_every(),
        }
    }
}

enum WriterMsg {
    Save(SaveRequest),
    Unsaved(Vec<Transition>),
    Transcript(String),
}

/// Single writer for one session's directory.
fn spawn_writer(
    dir: PathBuf,
    task: TaskId,
    spec_hash: String,
    config_hash: String,
    seed: u64,
) -> (std::sync::mpsc::Sender<WriterMsg>, std::thread::JoinHandle<()>) {
    let (tx, rx) = std::sync::mpsc::channel::<WriterMsg>();
    let join = std::thread::spawn(move || {
        let mut unsaved = 0usize;
        for msg in rx {
            let res = std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            });
            let res = res.and_then(|_| match msg {
                WriterMsg::Save(s) => write_buffer(&dir.join(&s.file), s.transitions, task, &spec_hash, &config_hash, seed, false),
                WriterMsg::Unsaved(ts) => {
                    let name = format!("unsaved-{unsaved:04}.jsonl");
                    unsaved += 1;
                    write_buffer(&dir.join(name), ts, task, &spec_hash, &config_hash, seed, true)
                }
                WriterMsg::Transcript(text) => {
                    let p = dir.join("transcript.jsonl");
                    std::fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })
                }
            });
            if let Err(e) = res {
                log::error!("session writer: {e}");
            }
        }
    });
    (tx, join)
}

/// Writes a recording buffer with its manifest. Buffers may mix human and
/// policy transitions, so they bypass [`Dataset`]'s human-only rule.
#[allow(clippy::too_many_arguments)]
fn write_buffer(
    path: &Path,
    ts: Vec<Transition>,
    task: TaskId,
    spec_hash: &str,
    config_hash: &str,
    seed: u64,
    partial: bool,
) -> Result<()> {
    let mut eps: Vec<usize> = ts.iter().map(|t| t.episode).collect();
    eps.dedup();
    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        task_id: task,
        task_spec_hash: spec_hash.to_string(),
        config_hash: config_hash.to_string(),
        master_seed: seed,
        transitions: ts.len(),
        episodes: eps.len(),
        partial,
    };
    std::fs::write(path, dataset::write_jsonl(&ts)).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mpath = dataset::manifest_path(path);
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&mpath, body).map_err(|e| Error::Io { path: mpath, source: e })
}

/// Replays `transcript` headless and writes the files its live session
/// would have written (saves, then any unsaved remainder) into `dir`.
pub fn replay_into(cfg: &ServerConfig, transcript: &Transcript, dir: &Path) -> Result<Vec<PathBuf>> {
    let scfg = cfg.session_config_for(&transcript.header.session, transcript.header.task_id);
    let task = scfg.env.task();
    let spec_hash = dataset::task_spec_hash(&scfg.env.spec);
    let seed = scfg.seed;
    let mut r = replay(transcript, scfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut written = Vec::new();
    for s in r.saves() {
        let p = dir.join(&s.file);
        write_buffer(&p, s.transitions.clone(), task, &spec_hash, &cfg.config_hash, seed, false)?;
        written.push(p);
    }
    if r.session.unsaved() {
        let p = dir.join("unsaved-0000.jsonl");
        write_buffer(&p, r.session.take_recording(), task, &spec_hash, &cfg.config_hash, seed, true)?;
        written.push(p);
    }
    Ok(written)
}

/// Human-labeled subset of a recording, ready for training.
pub fn human_dataset(ts: &[Transition]) -> Result<Dataset> {
    Dataset::try_from(ts.iter().filter(|t| t.source == Source::Human).cloned().collect::<Vec<_>>())
}

struct SessionHandle {
    queue: EventQueue,
    frames: broadcast::Sender<String>,
    occupied: AtomicBool,
    hello: String,
    physics: Mutex<Option<JoinHandle<()>>>,
    writer: Mutex<Option<std::thread::JoinHandle<()>>>,
}

struct AppState {
    cfg: ServerConfig,
    sessions: Mutex<HashMap<String, Arc<SessionHandle>>>,
    shutdown: watch::Receiver<bool>,
}

impl AppState {
    fn session(&self, id: &str, task: Option<&str>) -> Result<Arc<SessionHandle>> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::Config(format!("bad session id `{id}`")));
        }
        let mut map = self.sessions.lock().expect("session map lock");
        if let Some(h) = map.get(id) {
            if let Some(t) = task {
                let t: TaskId = t.parse()?;
                let running = serde_json::from_str::<serde_json::Value>(&h.hello).ok();
                let same = running.and_then(|v| v.get("task_id").cloned()) == Some(serde_json::json!(t.name()));
                if !same {
                    return Err(Error::Config(format!("session `{id}` runs a different task")));
                }
            }
            return Ok(h.clone());
        }
        let task = match task {
            Some(t) => t.parse()?,
            None => self.cfg.env.task(),
        };
        let scfg = self.cfg.session_config_for(id, task);
        let session = Session::new(scfg.clone())?;
        let hello = ServerFrame::Hello {
            protocol_version: PROTOCOL_VERSION,
            session: id.to_string(),
            task_id: scfg.env.task(),
            subtasks: scfg.env.spec.subtask_names.clone(),
            link_lengths: scfg.env.arm.link_lengths.clone(),
            physics_hz: self.cfg.physics_hz,
            snapshot_hz: self.cfg.snapshot_hz,
        }
        .to_text();
        let (frames, _) = broadcast::channel(1024);
        let handle = Arc::new(SessionHandle {
            queue: EventQueue::default(),
            frames,
            occupied: AtomicBool::new(false),
            hello,
            physics: Mutex::new(None),
            writer: Mutex::new(None),
        });
        let (writer, writer_join) = spawn_writer(
            self.cfg.data_dir.join(id),
            scfg.env.task(),
            dataset::task_spec_hash(&scfg.env.spec),
            self.cfg.config_hash.clone(),
            scfg.seed,
        );
        let transcript = self.cfg.record.then(|| Transcript::new(&scfg));
        let task = tokio::spawn(physics_loop(
            session,
            handle.clone(),
            writer,
            transcript,
            self.cfg.physics_hz,
            self.shutdown.clone(),
        ));
        *handle.physics.lock().expect("physics lock") = Some(task);
        *handle.writer.lock().expect("writer lock") = Some(writer_join);
        map.insert(id.to_string(), handle.clone());
        Ok(handle)
    }
}

async fn physics_loop(
    mut session: Session,
    handle: Arc<SessionHandle>,
    writer: std::sync::mpsc::Sender<WriterMsg>,
    mut transcript: Option<Transcript>,
    physics_hz: f64,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut clock = tokio::time::interval(Duration::from_secs_f64(1.0 / physics_hz));
    clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = clock.tick() => {}
            _ = shutdown.changed() => break,
        }
        let (events, dropped) = handle.queue.drain();
        session.note_dropped(dropped);
        if let Some(t) = transcript.as_mut() {
            t.record(session.tick_count(), &events);
        }
        let out = session.tick(&events);
        let saved = !out.saves.is_empty();
        for s in out.saves {
            let _ = writer.send(WriterMsg::Save(s));
        }
        if saved {
            if let Some(t) = transcript.as_ref() {
                let _ = writer.send(WriterMsg::Transcript(t.to_jsonl()));
            }
        }
        for f in out.frames {
            let _ = handle.frames.send(f.to_text());
        }
    }
    // clean shutdown: persist what the operator never saved
    if session.unsaved() {
        let _ = writer.send(WriterMsg::Unsaved(session.take_recording()));
    }
    if let Some(mut t) = transcript {
        t.end = t.end.max(session.tick_count());
        let _ = writer.send(WriterMsg::Transcript(t.to_jsonl()));
    }
}

async fn ws_route(
    ws: WebSocketUpgrade,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
    State(app): State<Arc<AppState>>,
) -> Response {
    let session = app.session(&id, q.get("task").map(String::as_str));
    let shutdown = app.shutdown.clone();
    ws.on_upgrade(move |socket| async move {
        match session {
            Ok(h) => operate(socket, h, shutdown).await,
            Err(e) => {
                let mut socket = socket;
                let frame = ServerFrame::Error {
                    tick: 0,
                    message: e.to_string(),
                };
                let _ = socket.send(Message::Text(frame.to_text().into())).await;
                let _ = socket.send(Message::Close(None)).await;
            }
        }
    })
}

async fn operate(mut socket: WebSocket, h: Arc<SessionHandle>, shutdown: watch::Receiver<bool>) {
    if h.occupied.swap(true, Ordering::AcqRel) {
        let busy = ServerFrame::Busy {
            message: "another operator holds this session".into(),
        };
        let _ = socket.send(Message::Text(busy.to_text().into())).await;
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    let _ = serve_operator(&mut socket, &h, shutdown).await;
    // losing the operator pauses the session
    h.queue.push(ClientFrame {
        last_tick: 0,
        command: Command::Stop,
    });
    h.occupied.store(false, Ordering::Release);
}

fn error_text(message: String) -> Message {
    Message::Text(ServerFrame::Error { tick: 0, message }.to_text().into())
}

async fn serve_operator(
    socket: &mut WebSocket,
    h: &SessionHandle,
    mut shutdown: watch::Receiver<bool>,
) -> std::result::Result<(), axum::Error> {
    socket.send(Message::Text(h.hello.clone().into())).await?;
    let first = tokio::time::timeout(HELLO_TIMEOUT, socket.recv()).await;
    let greeted = match first {
        Ok(Some(Ok(Message::Text(t)))) => match parse_client(&t) {
            Ok(ClientFrame {
                command: Command::Hello { protocol_version },
                ..
            }) if protocol_version == PROTOCOL_VERSION => true,
            Ok(ClientFrame {
                command: Command::Hello { protocol_version },
                ..
            }) => {
                socket
                    .send(error_text(format!(
                        "protocol version {protocol_version} is not supported (server speaks {PROTOCOL_VERSION})"
                    )))
                    .await?;
                false
            }
            _ => {
                socket.send(error_text("expected HELLO as the first frame".into())).await?;
                false
            }
        },
        _ => false,
    };
    if !greeted {
        let _ = socket.send(Message::Close(None)).await;
        return Ok(());
    }

    let mut frames = h.frames.subscribe();
    let (mut tx, mut rx) = socket.split();
    let (reply_tx, mut reply_rx) = tokio::sync::mpsc::unbounded_channel::<Message>();
    let sender = async {
        loop {
            let msg = tokio::select! {
                f = frames.recv() => match f {
                    Ok(text) => Message::Text(text.into()),
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                r = reply_rx.recv() => match r {
                    Some(m) => m,
                    None => break,
                },
            };
            if tx.send(msg).await.is_err() {
                break;
            }
        }
        let _ = tx.close().await;
    };
    let receiver = async {
        while let Some(Ok(msg)) = rx.next().await {
            match msg {
                Message::Text(t) => match parse_client(&t) {
                    Ok(f) => h.queue.push(f),
                    // rejected here, the session never sees it
                    Err(e) => {
                        let _ = reply_tx.send(error_text(e));
                    }
                },
                Message::Close(_) => break,
                _ => {}
            }
        }
        drop(reply_tx);
    };
    tokio::select! {
        _ = sender => {}
        _ = receiver => {}
        _ = shutdown.changed() => {}
    }
    Ok(())
}

/// A running server.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    app: Arc<AppState>,
    server: JoinHandle<()>,
}

impl ServerHandle {
    /// Stops every session, persisting unsaved buffers and transcripts.
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        let loops: Vec<JoinHandle<()>> = {
            let map = self.app.sessions.lock().expect("session map lock");
            map.values()
                .filter_map(|h| h.physics.lock().expect("physics lock").take())
                .collect()
        };
        for l in loops {
            let _ = l.await;
        }
        // each writer exits once its physics loop has dropped the sender
        let writers: Vec<std::thread::JoinHandle<()>> = {
            let map = self.app.sessions.lock().expect("session map lock");
            map.values()
                .filter_map(|h| h.writer.lock().expect("writer lock").take())
                .collect()
        };
        let _ = tokio::task::spawn_blocking(move || {
            for w in writers {
                let _ = w.join();
            }
        })
        .await;
        let _ = self.server.await;
    }
}

pub async fn start(cfg: ServerConfig) -> Result<ServerHandle> {
    cfg.validate()?;
    let listener = tokio::net::TcpListener::bind(&cfg.listen).await.map_err(|e| Error::Io {
        path: PathBuf::from(&cfg.listen),
        source: e,
    })?;
    let addr = listener.local_addr().map_err(|e| Error::Io {
        path: PathBuf::from(&cfg.listen),
        source: e,
    })?;
    let (shutdown, rx) = watch::channel(false);
    let app = Arc::new(AppState {
        cfg,
        sessions: Mutex::new(HashMap::new()),
        shutdown: rx.clone(),
    });
    let router = Router::new()
        .route("/session/{id}", get(ws_route))
        .with_state(app.clone());
    let mut stop = rx;
    let server = tokio::spawn(async move {
        let graceful = async move {
            let _ = stop.changed().await;
        };
        if let Err(e) = axum::serve(listener, router).with_graceful_shutdown(graceful).await {
            log::error!("server: {e}");
        }
    });
    Ok(ServerHandle {
        addr,
        shutdown,
        app,
        server,
    })
}
