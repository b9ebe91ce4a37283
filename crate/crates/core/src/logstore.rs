//! Append-only conversation log and the analytics computed over it.
//!
//! Records are newline-delimited JSON, one file per UTC day
//! (`conversations-YYYY-MM-DD.ndjson`). A trailing partial line left by a
//! crash is ignored on load.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::ChannelKind;
use crate::skills::CORE_SKILL;

const FILE_PREFIX: &str = "conversations-";
const FILE_SUFFIX: &str = ".ndjson";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    User,
    Bot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub session_id: String,
    pub turn: u32,
    pub seq: u32,
    pub timestamp: DateTime<Utc>,
    pub direction: Direction,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill: Option<String>,
    pub channel_kind: ChannelKind,
    /// Attribution to a consented profile; scrubbed on profile deletion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
}

type RecordKey = (String, Direction, u32, u32);

impl LogRecord {
    fn key(&self) -> RecordKey {
        (self.session_id.clone(), self.direction, self.turn, self.seq)
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("duplicate log record for session {session} ({direction:?} turn {turn} seq {seq})")]
    Duplicate {
        session: String,
        direction: Direction,
        turn: u32,
        seq: u32,
    },
    #[error("timestamp goes backwards in session {0}")]
    NonMonotonic(String),
    #[error("log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("log record encoding: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LogHealth {
    pub failures: u64,
    pub last_error: Option<String>,
}

#[derive(Debug, Default)]
struct State {
    keys: HashSet<RecordKey>,
    last_ts: HashMap<String, DateTime<Utc>>,
    memory: Vec<LogRecord>,
    health: LogHealth,
}

/// The conversation store. Appends are serialized by an internal lock.
#[derive(Debug)]
pub struct LogStore {
    dir: Option<PathBuf>,
    state: Mutex<State>,
}

impl LogStore {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            state: Mutex::new(State::default()),
        }
    }

    /// Opens a log directory, indexing the records already present.
    pub fn open(dir: &Path) -> Result<Self, LogError> {
        fs::create_dir_all(dir)?;
        let mut state = State::default();
        for r in load_dir(dir)? {
            state.last_ts.insert(r.session_id.clone(), r.timestamp);
            state.keys.insert(r.key());
        }
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            state: Mutex::new(state),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn append(&self, record: LogRecord) -> Result<(), LogError> {
        let mut state = self.state.lock().expect("log lock poisoned");
        let result = self.append_locked(&mut state, record);
        if let Err(e) = &result {
            state.health.failures += 1;
            state.health.last_error = Some(e.to_string());
        }
        result
    }

    fn append_locked(&self, state: &mut State, record: LogRecord) -> Result<(), LogError> {
        let key = record.key();
        if state.keys.contains(&key) {
            return Err(LogError::Duplicate {
                session: key.0,
                direction: key.1,
                turn: key.2,
                seq: key.3,
            });
        }
        if state
            .last_ts
            .get(&record.session_id)
            .is_some_and(|last| *last > record.timestamp)
        {
            return Err(LogError::NonMonotonic(record.session_id));
        }
        match &self.dir {
            Some(dir) => {
                let path = dir.join(file_name(record.timestamp));
                let mut line = serde_json::to_string(&record)?;
                line.push('\n');
                let mut f = OpenOptions::new().create(true).append(true).open(path)?;
                // one write per record keeps appends atomic at line granularity
                f.write_all(line.as_bytes())?;
                f.flush()?;
            }
            None => state.memory.push(record.clone()),
        }
        state
            .last_ts
            .insert(record.session_id.clone(), record.timestamp);
        state.keys.insert(key);
        Ok(())
    }

    /// Consistent snapshot of every record.
    pub fn records(&self) -> Result<Vec<LogRecord>, LogError> {
        let state = self.state.lock().expect("log lock poisoned");
        match &self.dir {
            Some(dir) => load_dir(dir),
            None => Ok(state.memory.clone()),
        }
    }

    /// Records of one session in (turn, seq, direction) order.
    pub fn transcript(&self, session_id: &str) -> Result<Vec<LogRecord>, LogError> {
        let mut out: Vec<LogRecord> = self
            .records()?
            .into_iter()
            .filter(|r| r.session_id == session_id)
            .collect();
        out.sort_by_key(|r| (r.turn, r.seq, r.direction));
        Ok(out)
    }

    pub fn health(&self) -> LogHealth {
        self.state.lock().expect("log lock poisoned").health.clone()
    }

    /// Removes `user_id` attribution from every record. Returns how many changed.
    pub fn scrub_user(&self, user_id: &str) -> Result<usize, LogError> {
        let mut state = self.state.lock().expect("log lock poisoned");
        match &self.dir {
            Some(dir) => scrub_dir(dir, user_id),
            None => {
                let mut n = 0;
                for r in state
                    .memory
                    .iter_mut()
                    .filter(|r| r.user_id.as_deref() == Some(user_id))
                {
                    r.user_id = None;
                    n += 1;
                }
                Ok(n)
            }
        }
    }
}

fn file_name(ts: DateTime<Utc>) -> String {
    format!("{FILE_PREFIX}{}{FILE_SUFFIX}", ts.format("%Y-%m-%d"))
}

fn log_files(dir: &Path) -> Result<Vec<PathBuf>, LogError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(FILE_PREFIX) && n.ends_with(FILE_SUFFIX))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every record under `dir`. Duplicate keys keep their first occurrence.
pub fn load_dir(dir: &Path) -> Result<Vec<LogRecord>, LogError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for path in log_files(dir)? {
        let reader = BufReader::new(fs::File::open(&path)?);
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            // torn final write after a crash
            let Ok(record) = serde_json::from_str::<LogRecord>(&line) else {
                continue;
            };
            if seen.insert(record.key()) {
                out.push(record);
            }
        }
    }
    Ok(out)
}

fn scrub_dir(dir: &Path, user_id: &str) -> Result<usize, LogError> {
    let mut changed = 0;
    for path in log_files(dir)? {
        let text = fs::read_to_string(&path)?;
        let mut rewritten = String::with_capacity(text.len());
        let mut file_changed = false;
        for line in text.lines() {
            match serde_json::from_str::<LogRecord>(line) {
                Ok(mut r) if r.user_id.as_deref() == Some(user_id) => {
                    r.user_id = None;
                    rewritten.push_str(&serde_json::to_string(&r)?);
                    changed += 1;
                    file_changed = true;
                }
                _ => rewritten.push_str(line),
            }
            rewritten.push('\n');
        }
        if file_changed {
            let tmp = path.with_extension("ndjson.tmp");
            fs::write(&tmp, rewritten)?;
            fs::rename(&tmp, &path)?;
        }
    }
    Ok(changed)
}

/// Conversation length (user turns per session) to number of sessions.
pub fn conversation_length_histogram(records: &[LogRecord]) -> BTreeMap<usize, usize> {
    let mut per_session: HashMap<&str, usize> = HashMap::new();
    for r in records.iter().filter(|r| r.direction == Direction::User) {
        *per_session.entry(&r.session_id).or_default() += 1;
    }
    let mut hist = BTreeMap::new();
    for len in per_session.into_values() {
        *hist.entry(len).or_default() += 1;
    }
    hist
}

/// Bot turns per skill; unattributed records count as Core.
pub fn turns_per_skill(records: &[LogRecord]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in records.iter().filter(|r| r.direction == Direction::Bot) {
        let skill = r.skill.clone().unwrap_or_else(|| CORE_SKILL.to_string());
        *out.entry(skill).or_default() += 1;
    }
    out
}

/// Renders a count map as an aligned two-column table.
pub fn format_table<K: std::fmt::Display>(
    header: (&str, &str),
    rows: &BTreeMap<K, usize>,
) -> String {
    let keys: Vec<String> = rows.keys().map(|k| k.to_string()).collect();
    let width = keys
        .iter()
        .map(String::len)
        .chain([header.0.len()])
        .max()
        .unwrap_or(0);
    let mut out = format!("{:<width$}  {}\n", header.0, header.1);
    for (k, v) in keys.iter().zip(rows.values()) {
        out.push_str(&format!("{k:<width$}  {v}\n"));
    }
    out
}
