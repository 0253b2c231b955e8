use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use handover::bilateral::{GainProfile, Mode};
use handover::dataset::{self, DatasetManifest, Source};
use handover::env::Env;
use handover::policy::Policy;
use handover::sim::TaskId;
use handover_teleop::protocol::{ServerFrame, Snapshot};
use handover_teleop::server::{replay_into, ServerConfig, ServerHandle};
use handover_teleop::transcript::Transcript;
use handover_teleop::{start, PROTOCOL_VERSION};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn server_config(dir: &Path, snapshot_hz: f64, record: bool) -> ServerConfig {
    let env = Env::preset(TaskId::Reach2d);
    let mut policy = Policy::zeros(env.obs_dim(), 4, env.action_dim());
    policy.act_norm.mean = vec![0.003; env.action_dim()];
    ServerConfig {
        listen: "127.0.0.1:0".into(),
        gains: GainProfile::defaults_for(&env.arm),
        env,
        policy: Some(policy),
        seed: 11,
        physics_hz: 100.0,
        snapshot_hz,
        data_dir: dir.to_path_buf(),
        record,
        config_hash: "test".into(),
    }
}

async fn raw_connect(server: &ServerHandle, path: &str) -> Ws {
    let url = format!("ws://{}{path}", server.addr);
    connect_async(url).await.expect("connect").0
}

async fn next_frame(ws: &mut Ws) -> ServerFrame {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("frame within 5 s")
            .expect("stream open")
            .expect("frame");
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).expect("server frames parse");
        }
    }
}

/// Connects and completes the handshake.
async fn connect(server: &ServerHandle, path: &str) -> Ws {
    let mut ws = raw_connect(server, path).await;
    match next_frame(&mut ws).await {
        ServerFrame::Hello { protocol_version, .. } => assert_eq!(protocol_version, PROTOCOL_VERSION),
        other => panic!("expected HELLO, got {other:?}"),
    }
    send(&mut ws, &format!(r#"{{"type":"HELLO","protocol_version":{PROTOCOL_VERSION}}}"#)).await;
    ws
}

async fn send(ws: &mut Ws, text: &str) {
    ws.send(Message::Text(text.to_string().into())).await.expect("send");
}

async fn command(ws: &mut Ws, kind: &str, last_tick: u64) {
    send(ws, &format!(r#"{{"type":"{kind}","last_tick":{last_tick}}}"#)).await;
}

async fn snapshot_where(ws: &mut Ws, pred: impl Fn(&Snapshot) -> bool) -> Snapshot {
    loop {
        if let ServerFrame::Snapshot(s) = next_frame(ws).await {
            if pred(&s) {
                return s;
            }
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn grab_is_reflected_within_three_ticks() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(server_config(dir.path(), 100.0, false)).await.unwrap();
    let mut ws = connect(&server, "/session/lat").await;
    command(&mut ws, "START_POLICY", 0).await;
    snapshot_where(&mut ws, |s| s.mode == Mode::Autonomous && s.tick > 5).await;
    // answer the freshest snapshot
    let seen = snapshot_where(&mut ws, |_| true).await;
    command(&mut ws, "HUMAN_GRAB", seen.tick).await;
    let taken = snapshot_where(&mut ws, |s| s.mode == Mode::Takeover).await;
    assert_eq!(taken.acked_tick, Some(seen.tick));
    assert!(taken.intervention);
    assert!(
        taken.tick <= seen.tick + 3,
        "grab sent after tick {} shown at tick {}",
        seen.tick,
        taken.tick
    );
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn second_operator_is_turned_away() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(server_config(dir.path(), 20.0, false)).await.unwrap();
    let mut first = connect(&server, "/session/solo").await;
    snapshot_where(&mut first, |_| true).await;
    let mut second = raw_connect(&server, "/session/solo").await;
    assert!(matches!(next_frame(&mut second).await, ServerFrame::Busy { .. }));
    // the first operator is unaffected
    command(&mut first, "ENGAGE_TELEOP", 0).await;
    snapshot_where(&mut first, |s| s.mode == Mode::Teleop).await;
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_frames_get_an_error_and_change_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(server_config(dir.path(), 20.0, false)).await.unwrap();
    let mut ws = connect(&server, "/session/bad").await;
    let before = snapshot_where(&mut ws, |_| true).await;
    for bad in ["{not json", r#"{"type":"TELEPORT"}"#, r#"{"type":"DRIVE"}"#] {
        send(&mut ws, bad).await;
        loop {
            match next_frame(&mut ws).await {
                ServerFrame::Error { message, .. } => {
                    assert!(message.contains("malformed"), "{message}");
                    break;
                }
                ServerFrame::Snapshot(s) => assert_eq!(s.mode, Mode::Idle),
                other => panic!("unexpected {other:?}"),
            }
        }
    }
    let after = snapshot_where(&mut ws, |_| true).await;
    assert_eq!(after.mode, Mode::Idle);
    assert_eq!(after.arms, before.arms);
    assert_eq!(after.acked_tick, None);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn handshake_rejects_other_protocol_versions() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(server_config(dir.path(), 20.0, false)).await.unwrap();
    let mut ws = raw_connect(&server, "/session/v").await;
    assert!(matches!(next_frame(&mut ws).await, ServerFrame::Hello { .. }));
    send(&mut ws, r#"{"type":"HELLO","protocol_version":99}"#).await;
    match next_frame(&mut ws).await {
        ServerFrame::Error { message, .. } => assert!(message.contains("99")),
        other => panic!("expected ERROR, got {other:?}"),
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn disconnect_pauses_and_shutdown_keeps_the_unsaved_buffer() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(server_config(dir.path(), 20.0, false)).await.unwrap();
    let mut ws = connect(&server, "/session/gone").await;
    command(&mut ws, "START_POLICY", 0).await;
    snapshot_where(&mut ws, |s| s.mode == Mode::Autonomous && s.recording >= 10).await;
    ws.close(None).await.unwrap();
    drop(ws);

    // the server may not have noticed the close yet
    let mut back = loop {
        let mut ws = raw_connect(&server, "/session/gone").await;
        match next_frame(&mut ws).await {
            ServerFrame::Hello { .. } => break ws,
            ServerFrame::Busy { .. } => tokio::time::sleep(Duration::from_millis(20)).await,
            other => panic!("unexpected {other:?}"),
        }
    };
    send(&mut back, &format!(r#"{{"type":"HELLO","protocol_version":{PROTOCOL_VERSION}}}"#)).await;
    let s = snapshot_where(&mut back, |s| s.mode == Mode::Idle).await;
    assert!(s.recording >= 10, "buffer kept after disconnect");
    let paused = snapshot_where(&mut back, |_| true).await;
    assert_eq!(paused.recording, s.recording);
    assert_eq!(paused.arms, s.arms);
    drop(back);

    server.shutdown().await;
    let file = dir.path().join("gone/unsaved-0000.jsonl");
    let ts = dataset::read_transitions(&file).unwrap();
    assert_eq!(ts.len(), s.recording);
    assert!(ts.iter().all(|t| t.source == Source::Policy));
    let m: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dataset::manifest_path(&file)).unwrap()).unwrap();
    assert!(m.partial);
    assert_eq!(m.transitions, ts.len());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_on_different_tasks_are_independent() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(server_config(dir.path(), 20.0, false)).await.unwrap();
    let mut a = connect(&server, "/session/a?task=reach2d").await;
    let mut b = connect(&server, "/session/b?task=pickplace2d").await;
    command(&mut a, "ENGAGE_TELEOP", 0).await;
    send(&mut a, r#"{"type":"DRIVE","arm":0,"joint_deltas":[0.2,0.1]}"#).await;
    command(&mut b, "ENGAGE_TELEOP", 0).await;
    snapshot_where(&mut a, |s| s.recording >= 20).await;
    let sb = snapshot_where(&mut b, |s| s.recording >= 5).await;
    assert_eq!(sb.objects.len(), 1);
    command(&mut a, "SAVE", 0).await;
    loop {
        if let ServerFrame::Saved { file, .. } = next_frame(&mut a).await {
            assert_eq!(file, "save-0000.jsonl");
            break;
        }
    }
    command(&mut b, "STOP", 0).await;
    command(&mut b, "DISCARD", 0).await;
    loop {
        if let ServerFrame::Discarded { .. } = next_frame(&mut b).await {
            break;
        }
    }
    // a task mismatch on a running session is refused
    let mut wrong = raw_connect(&server, "/session/a?task=pickplace2d").await;
    assert!(matches!(next_frame(&mut wrong).await, ServerFrame::Error { .. }));
    drop((a, b, wrong));
    server.shutdown().await;

    let saved = dataset::read_transitions(&dir.path().join("a/save-0000.jsonl")).unwrap();
    assert!(saved.len() >= 20);
    assert!(saved.iter().all(|t| t.task_id == TaskId::Reach2d && t.source == Source::Human));
    let b_files: Vec<_> = std::fs::read_dir(dir.path().join("b"))
        .map(|d| d.map(|e| e.unwrap().file_name()).collect())
        .unwrap_or_default();
    assert!(b_files.is_empty(), "discarded session wrote {b_files:?}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn recorded_sessions_replay_byte_for_byte() {
    let live = tempfile::tempdir().unwrap();
    let cfg = server_config(live.path(), 20.0, true);
    let server = start(cfg.clone()).await.unwrap();
    let mut ws = connect(&server, "/session/rec").await;
    command(&mut ws, "START_POLICY", 0).await;
    let s = snapshot_where(&mut ws, |s| s.recording >= 15).await;
    command(&mut ws, "HUMAN_GRAB", s.tick).await;
    send(&mut ws, r#"{"type":"DRIVE","arm":0,"joint_deltas":[-0.2,0.3]}"#).await;
    let s = snapshot_where(&mut ws, |s| s.mode == Mode::Takeover && s.recording >= 40).await;
    command(&mut ws, "SAVE", s.tick).await;
    command(&mut ws, "HUMAN_RELEASE", s.tick).await;
    snapshot_where(&mut ws, |s| s.mode == Mode::Autonomous && s.recording >= 10).await;
    drop(ws);
    server.shutdown().await;

    let transcript = Transcript::load(&live.path().join("rec/transcript.jsonl")).unwrap();
    assert!(transcript.events.len() >= 5);
    let again = tempfile::tempdir().unwrap();
    let written = replay_into(&cfg, &transcript, again.path()).unwrap();
    let names: Vec<String> = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["save-0000.jsonl", "unsaved-0000.jsonl"]);
    for name in &names {
        let a = std::fs::read(live.path().join("rec").join(name)).unwrap();
        let b = std::fs::read(again.path().join(name)).unwrap();
        assert!(a == b, "{name} differs after replay");
        let ma = std::fs::read(dataset::manifest_path(&live.path().join("rec").join(name))).unwrap();
        let mb = std::fs::read(dataset::manifest_path(&again.path().join(name))).unwrap();
        assert!(ma == mb, "{name} manifest differs after replay");
    }
    let saved = dataset::read_transitions(&again.path().join("save-0000.jsonl")).unwrap();
    for t in &saved {
        let want = if t.mode_at_step == Mode::Autonomous { Source::Policy } else { Source::Human };
        assert_eq!(t.source, want);
    }
}
