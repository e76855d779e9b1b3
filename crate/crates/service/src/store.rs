//! Session registry and on-disk layout.
//!
//! ```text
//! <data>/<session id>/events.jsonl   audit log, one entry per line, append-only
//! <data>/<session id>/snapshot.json  session view after the last entry
//! ```
//!
//! The event log is authoritative. Loading replays it; the snapshot is
//! rewritten whenever it disagrees with the replayed state.

use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock as StdRwLock};

use chrono::Utc;
use crm_api::{AuditEntry, SessionSummary, SessionView};
use crm_core::DesignConfig;
use tokio::fs;
use tokio::io::AsyncWriteExt;
use tokio::sync::RwLock;
use uuid::Uuid;

use crate::session::{Session, SessionError};

const EVENTS: &str = "events.jsonl";
const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no session {0}")]
    NotFound(Uuid),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

pub type SessionHandle = Arc<RwLock<Session>>;

/// All sessions, optionally persisted under a data directory.
#[derive(Default)]
pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: StdRwLock<HashMap<Uuid, SessionHandle>>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens `dir`, replaying every session found there.
    pub async fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).await.map_err(io_err(&dir))?;
        let mut sessions = HashMap::new();
        let mut entries = fs::read_dir(&dir).await.map_err(io_err(&dir))?;
        while let Some(entry) = entries.next_entry().await.map_err(io_err(&dir))? {
            let path = entry.path();
            let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(|n| Uuid::parse_str(n).ok())
            else {
                continue;
            };
            if !path.join(EVENTS).exists() {
                continue;
            }
            let session = load_session(&path).await?;
            if session.id() != id {
                return Err(StoreError::Corrupt {
                    path,
                    message: format!("log belongs to session {}", session.id()),
                });
            }
            tracing::info!(%id, patients = session.history().len(), "session loaded");
            sessions.insert(id, Arc::new(RwLock::new(session)));
        }
        Ok(SessionStore { dir: Some(dir), sessions: StdRwLock::new(sessions) })
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, id: Uuid) -> Result<SessionHandle, StoreError> {
        self.sessions.read().expect("session map poisoned").get(&id).cloned().ok_or(StoreError::NotFound(id))
    }

    pub async fn list(&self) -> Vec<SessionSummary> {
        let handles: Vec<SessionHandle> =
            self.sessions.read().expect("session map poisoned").values().cloned().collect();
        let mut out = Vec::with_capacity(handles.len());
        for h in handles {
            out.push(h.read().await.summary());
        }
        out.sort_by_key(|s| s.id);
        out
    }

    pub async fn create(&self, config: DesignConfig) -> Result<SessionView, StoreError> {
        let id = Uuid::new_v4();
        let session = Session::create(id, config, Utc::now())?;
        self.persist(&session, 0).await?;
        let view = session.view();
        self.sessions.write().expect("session map poisoned").insert(id, Arc::new(RwLock::new(session)));
        Ok(view)
    }

    /// Runs `f` under the session's write lock and persists whatever it
    /// appended to the log. A failed write leaves memory untouched.
    pub async fn update<T>(
        &self,
        id: Uuid,
        f: impl FnOnce(&mut Session) -> Result<T, SessionError>,
    ) -> Result<T, StoreError> {
        let handle = self.get(id)?;
        let mut guard = handle.write().await;
        let mut next = guard.clone();
        let before = next.log().len();
        let out = f(&mut next)?;
        self.persist(&next, before).await?;
        *guard = next;
        Ok(out)
    }

    async fn persist(&self, session: &Session, from: usize) -> Result<(), StoreError> {
        let Some(root) = &self.dir else {
            return Ok(());
        };
        let dir = root.join(session.id().to_string());
        fs::create_dir_all(&dir).await.map_err(io_err(&dir))?;
        let events = dir.join(EVENTS);
        let mut buf = Vec::new();
        for entry in &session.log()[from..] {
            serde_json::to_writer(&mut buf, entry).expect("audit entries serialize");
            buf.push(b'\n');
        }
        let mut file =
            fs::OpenOptions::new().create(true).append(true).open(&events).await.map_err(io_err(&events))?;
        file.write_all(&buf).await.map_err(io_err(&events))?;
        file.sync_data().await.map_err(io_err(&events))?;
        write_snapshot(&dir, &session.view()).await
    }
}

async fn write_snapshot(dir: &Path, view: &SessionView) -> Result<(), StoreError> {
    let path = dir.join(SNAPSHOT);
    let tmp = dir.join("snapshot.json.tmp");
    let body = serde_json::to_vec_pretty(view).expect("session view serializes");
    fs::write(&tmp, body).await.map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).await.map_err(io_err(&path))
}

/// Parses an event log. A torn final line (no trailing newline) is dropped.
pub fn parse_log(path: &Path, text: &str) -> Result<Vec<AuditEntry>, StoreError> {
    let complete = text.ends_with('\n') || text.is_empty();
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<AuditEntry>(line) {
            Ok(e) => out.push(e),
            Err(e) if i + 1 == lines.len() && !complete => {
                tracing::warn!(path = %path.display(), error = %e, "dropping torn last line");
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", i + 1),
                })
            }
        }
    }
    Ok(out)
}

pub async fn load_session(dir: &Path) -> Result<Session, StoreError> {
    let events = dir.join(EVENTS);
    let text = fs::read_to_string(&events).await.map_err(io_err(&events))?;
    let entries = parse_log(&events, &text)?;
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        fs::write(&events, &text[..keep]).await.map_err(io_err(&events))?;
    }
    let session = Session::replay(entries)
        .map_err(|e| StoreError::Corrupt { path: events.clone(), message: e.to_string() })?;
    let view = session.view();
    let snapshot = dir.join(SNAPSHOT);
    let stale = match fs::read(&snapshot).await {
        Ok(bytes) => serde_json::from_slice::<SessionView>(&bytes).ok().as_ref() != Some(&view),
        Err(_) => true,
    };
    if stale {
        tracing::warn!(path = %snapshot.display(), "snapshot rewritten from the event log");
        write_snapshot(dir, &view).await?;
    }
    Ok(session)
}
