//! Session store: an in-memory map backed by an append-only JSON-lines log.
//!
//! Each line is an event. On startup the log is replayed through the same
//! session logic that produced it, so a restarted service ends up with
//! identical sessions, revisions included.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ballot_audit::{Decision, SessionError, SessionState};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

pub const LOG_FILE: &str = "sessions.jsonl";

/// A session plus the bookkeeping the API adds on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    #[serde(flatten)]
    pub state: SessionState,
    pub created_at: DateTime<Utc>,
    /// Bumped on every accepted round; clients echo it back to avoid
    /// recording a round against a state they have not seen.
    pub revision: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created { session: Box<ApiSession> },
    Round { id: Uuid, n: u64, k: u64, recorded_at: DateTime<Utc> },
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no session {0}")]
    NotFound(Uuid),
    #[error("revision {given} is stale; current revision is {current}")]
    Stale { given: u64, current: u64 },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("session log: {0}")]
    Io(#[from] std::io::Error),
    #[error("session log line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

struct Inner {
    sessions: HashMap<Uuid, ApiSession>,
    log: Option<File>,
}

pub struct Store {
    inner: Mutex<Inner>,
    path: Option<PathBuf>,
}

impl Store {
    pub fn in_memory() -> Store {
        Store { inner: Mutex::new(Inner { sessions: HashMap::new(), log: None }), path: None }
    }

    /// Opens (creating if needed) `dir/sessions.jsonl` and replays it.
    pub fn open(dir: &Path) -> Result<Store, StoreError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let mut sessions = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| StoreError::Corrupt { line: i + 1, message };
                match serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))? {
                    Event::Created { session } => {
                        sessions.insert(session.state.id, *session);
                    }
                    Event::Round { id, n, k, recorded_at } => {
                        let s: &mut ApiSession = sessions.get_mut(&id).ok_or_else(|| corrupt(format!("unknown session {id}")))?;
                        s.state.record_round_at(n, k, recorded_at).map_err(|e| corrupt(e.to_string()))?;
                        s.revision += 1;
                    }
                }
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Store { inner: Mutex::new(Inner { sessions, log: Some(log) }), path: Some(path) })
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn insert(&self, state: SessionState) -> Result<ApiSession, StoreError> {
        let session = ApiSession { state, created_at: Utc::now(), revision: 0 };
        let mut inner = self.lock();
        append(&mut inner.log, &Event::Created { session: Box::new(session.clone()) })?;
        inner.sessions.insert(session.state.id, session.clone());
        Ok(session)
    }

    pub fn get(&self, id: Uuid) -> Result<ApiSession, StoreError> {
        self.lock().sessions.get(&id).cloned().ok_or(StoreError::NotFound(id))
    }

    pub fn list(&self) -> Vec<ApiSession> {
        let mut all: Vec<ApiSession> = self.lock().sessions.values().cloned().collect();
        all.sort_by_key(|s| (s.created_at, s.state.id));
        all
    }

    /// Records a round if `revision` is current. The check, the state
    /// change and the log append happen under one lock.
    pub fn record_round(&self, id: Uuid, revision: u64, n: u64, k: u64) -> Result<(Decision, ApiSession), StoreError> {
        let mut inner = self.lock();
        let Inner { sessions, log } = &mut *inner;
        let session = sessions.get_mut(&id).ok_or(StoreError::NotFound(id))?;
        if session.revision != revision {
            return Err(StoreError::Stale { given: revision, current: session.revision });
        }
        let recorded_at = Utc::now();
        let mut next = session.state.clone();
        let verdict = next.record_round_at(n, k, recorded_at)?;
        append(log, &Event::Round { id, n, k, recorded_at })?;
        session.state = next;
        session.revision += 1;
        Ok((verdict, session.clone()))
    }
}

fn append(log: &mut Option<File>, event: &Event) -> Result<(), StoreError> {
    if let Some(file) = log {
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_data()?;
    }
    Ok(())
}
