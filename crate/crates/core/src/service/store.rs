//! Append-only JSON-lines session logs plus a key-value profile file.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::engine::TurnTrace;
use super::{Selector, ServiceError};
use crate::dialogue::{DialogueHistory, Turn, UserProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Started {
        session_id: String,
        user_id: String,
        selector: Selector,
        at_ms: i64,
    },
    Turn {
        user: Turn,
        bot: Turn,
        trace: Box<TurnTrace>,
    },
    Ended {
        at_ms: i64,
    },
}

/// Rebuilds the dialogue history recorded in a session log.
pub fn replay_history(events: &[SessionEvent]) -> Result<DialogueHistory, ServiceError> {
    let mut history = DialogueHistory::new();
    for e in events {
        if let SessionEvent::Turn { user, bot, .. } = e {
            history
                .push(user.clone())
                .and_then(|_| history.push(bot.clone()))
                .map_err(|e| ServiceError::Storage(e.to_string()))?;
        }
    }
    Ok(history)
}

pub trait SessionStore: Send + Sync {
    fn append(&self, session_id: &str, event: &SessionEvent) -> Result<(), ServiceError>;
    fn events(&self, session_id: &str) -> Result<Vec<SessionEvent>, ServiceError>;
    fn load_profile(&self, user_id: &str) -> Result<Option<UserProfile>, ServiceError>;
    fn save_profile(&self, profile: &UserProfile) -> Result<(), ServiceError>;
}

fn io(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Storage(e.to_string())
}

/// `<dir>/sessions/<id>.jsonl` and `<dir>/profiles.json`.
#[derive(Debug)]
pub struct FileStore {
    dir: PathBuf,
    // serializes read-modify-write of the profile file
    profiles: Mutex<()>,
}

impl FileStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let dir = dir.into();
        std::fs::create_dir_all(dir.join("sessions")).map_err(io)?;
        Ok(Self {
            dir,
            profiles: Mutex::new(()),
        })
    }

    /// Ids of every logged session, sorted.
    pub fn session_ids(&self) -> Result<Vec<String>, ServiceError> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(self.dir.join("sessions")).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_owned());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn session_path(&self, id: &str) -> Result<PathBuf, ServiceError> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ServiceError::Storage(format!("unsafe session id `{id}`")));
        }
        Ok(self.dir.join("sessions").join(format!("{id}.jsonl")))
    }

    fn profile_path(&self) -> PathBuf {
        self.dir.join("profiles.json")
    }

    fn read_profiles(&self) -> Result<BTreeMap<String, UserProfile>, ServiceError> {
        match std::fs::read_to_string(self.profile_path()) {
            Ok(text) => serde_json::from_str(&text).map_err(io),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
            Err(e) => Err(io(e)),
        }
    }
}

impl SessionStore for FileStore {
    fn append(&self, session_id: &str, event: &SessionEvent) -> Result<(), ServiceError> {
        let mut line = serde_json::to_string(event).map_err(io)?;
        line.push('\n');
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.session_path(session_id)?)
            .map_err(io)?;
        f.write_all(line.as_bytes()).map_err(io)
    }

    fn events(&self, session_id: &str) -> Result<Vec<SessionEvent>, ServiceError> {
        let text = std::fs::read_to_string(self.session_path(session_id)?).map_err(io)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| ServiceError::Storage(format!("line {}: {e}", i + 1))))
            .collect()
    }

    fn load_profile(&self, user_id: &str) -> Result<Option<UserProfile>, ServiceError> {
        let _g = self.profiles.lock().unwrap_or_else(|e| e.into_inner());
        Ok(self.read_profiles()?.remove(user_id))
    }

    fn save_profile(&self, profile: &UserProfile) -> Result<(), ServiceError> {
        let _g = self.profiles.lock().unwrap_or_else(|e| e.into_inner());
        let mut all = self.read_profiles()?;
        all.insert(profile.user_id.clone(), profile.clone());
        let tmp = self.dir.join("profiles.json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&all).map_err(io)?).map_err(io)?;
        std::fs::rename(&tmp, self.profile_path()).map_err(io)
    }
}

/// In-memory store. Writes can be made to fail for retry tests.
#[derive(Debug, Default)]
pub struct MemoryStore {
    sessions: Mutex<HashMap<String, Vec<SessionEvent>>>,
    profiles: Mutex<HashMap<String, UserProfile>>,
    failing: AtomicBool,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_failing(&self, failing: bool) {
        self.failing.store(failing, Ordering::SeqCst);
    }

    fn check(&self) -> Result<(), ServiceError> {
        if self.failing.load(Ordering::SeqCst) {
            Err(ServiceError::Storage("injected failure".into()))
        } else {
            Ok(())
        }
    }
}

impl SessionStore for MemoryStore {
    fn append(&self, session_id: &str, event: &SessionEvent) -> Result<(), ServiceError> {
        self.check()?;
        self.sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(session_id.to_owned())
            .or_default()
            .push(event.clone());
        Ok(())
    }

    fn events(&self, session_id: &str) -> Result<Vec<SessionEvent>, ServiceError> {
        self.sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_owned()))
    }

    fn load_profile(&self, user_id: &str) -> Result<Option<UserProfile>, ServiceError> {
        Ok(self.profiles.lock().unwrap_or_else(|e| e.into_inner()).get(user_id).cloned())
    }

    fn save_profile(&self, profile: &UserProfile) -> Result<(), ServiceError> {
        self.check()?;
        self.profiles
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(profile.user_id.clone(), profile.clone());
        Ok(())
    }
}
