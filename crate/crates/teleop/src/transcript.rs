//! Event transcripts: every client frame a session applied, keyed by the
//! tick boundary it was applied at. Replaying one through a fresh session
//! reproduces the session exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use handover::dataset::{write_jsonl, Transition};
use handover::policy::{encode, Policy};
use handover::sim::TaskId;
use handover::{Error, Result};

use crate::protocol::ClientFrame;
use crate::session::{SaveRequest, Session, SessionConfig, TickOutput};

pub const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptHeader {
    pub version: u32,
    pub session: String,
    pub task_id: TaskId,
    pub seed: u64,
    pub snapshot_every: u64,
    pub policy_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(TranscriptHeader),
    Event { tick: u64, frame: ClientFrame },
    End { tick: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub events: Vec<(u64, ClientFrame)>,
    /// Ticks the session ran for.
    pub end: u64,
}

fn policy_hash(p: Option<&Policy>) -> Option<String> {
    p.map(|p| hex::encode(Sha256::digest(encode(p))))
}

impl Transcript {
    pub fn new(cfg: &SessionConfig) -> Self {
        Self {
            header: TranscriptHeader {
                version: TRANSCRIPT_VERSION,
                session: cfg.id.clone(),
                task_id: cfg.env.task(),
                seed: cfg.seed,
                snapshot_every: cfg.snapshot_every,
                policy_sha256: policy_hash(cfg.policy.as_ref()),
            },
            events: Vec::new(),
            end: 0,
        }
    }

    pub fn record(&mut self, tick: u64, frames: &[ClientFrame]) {
        self.events.extend(frames.iter().map(|f| (tick, f.clone())));
        self.end = self.end.max(tick + 1);
    }

    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![Line::Header(self.header.clone())];
        lines.extend(self.events.iter().map(|(tick, frame)| Line::Event {
            tick: *tick,
            frame: frame.clone(),
        }));
        lines.push(Line::End { tick: self.end });
        write_jsonl(&lines)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = None;
        let mut events = Vec::new();
        let mut end = None;
        for (i, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |m: String| Error::Format(format!("transcript line {}: {m}", i + 1));
            if end.is_some() {
                return Err(bad("content after end".into()));
            }
            match serde_json::from_str(raw).map_err(|e| bad(e.to_string()))? {
                Line::Header(h) if header.is_none() => header = Some(h),
                Line::Header(_) => return Err(bad("second header".into())),
                _ if header.is_none() => return Err(bad("missing header".into())),
                Line::Event { tick, frame } => {
                    if events.last().is_some_and(|(t, _): &(u64, ClientFrame)| *t > tick) {
                        return Err(bad("events out of tick order".into()));
                    }
                    events.push((tick, frame));
                }
                Line::End { tick } => end = Some(tick),
            }
        }
        let header = header.ok_or_else(|| Error::Format("transcript is empty".into()))?;
        if header.version != TRANSCRIPT_VERSION {
            return Err(Error::Format(format!("transcript version {} is not supported", header.version)));
        }
        let end = end.ok_or_else(|| Error::Format("transcript has no end line".into()))?;
        if events.last().is_some_and(|(t, _)| *t >= end) {
            return Err(Error::Format("event after the end tick".into()));
        }
        Ok(Self { header, events, end })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Errors unless `cfg` describes the session this transcript came from.
    pub fn check_matches(&self, cfg: &SessionConfig) -> Result<()> {
        let mut want = Transcript::new(cfg).header;
        want.session = self.header.session.clone();
        let h = &self.header;
        let mut diff = Vec::new();
        if h.task_id != want.task_id {
            diff.push(format!("task_id ({} vs {})", h.task_id, want.task_id));
        }
        if h.seed != want.seed {
            diff.push(format!("seed ({} vs {})", h.seed, want.seed));
        }
        if h.snapshot_every != want.snapshot_every {
            diff.push("snapshot interval".to_string());
        }
        if h.policy_sha256 != want.policy_sha256 {
            diff.push("policy".to_string());
        }
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::ProtocolMismatch(format!(
                "transcript was recorded with a different {}",
                diff.join(", ")
            )))
        }
    }
}

/// Result of driving a fresh session through a transcript.
#[derive(Debug)]
pub struct Replay {
    pub session: Session,
    pub outputs: Vec<TickOutput>,
}

impl Replay {
    pub fn saves(&self) -> impl Iterator<Item = &SaveRequest> {
        self.outputs.iter().flat_map(|o| &o.saves)
    }

    /// Every saved transition in save order, followed by whatever was still
    /// buffered when the transcript ended.
    pub fn transition_log(&self) -> String {
        let mut all: Vec<Transition> = self.saves().flat_map(|s| s.transitions.iter().cloned()).collect();
        all.extend(self.session.recording().iter().cloned());
        write_jsonl(&all)
    }
}

pub fn replay(transcript: &Transcript, cfg: SessionConfig) -> Result<Replay> {
    transcript.check_matches(&cfg)?;
    let mut session = Session::new(cfg)?;
    let mut outputs = Vec::with_capacity(transcript.end as usize);
    let mut next = transcript.events.iter().peekable();
    for tick in 0..transcript.end {
        let mut batch = Vec::new();
        while let Some((_, f)) = next.next_if(|(t, _)| *t == tick) {
            batch.push(f.clone());
        }
        outputs.push(session.tick(&batch));
    }
    Ok(Replay { session, outputs })
}
