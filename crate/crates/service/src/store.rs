//! File-backed persistence: one append-only JSONL event log per session,
//! an index of sessions, a scenario file and the idempotency record.
//!
//! Layout under the data directory:
//! `index.jsonl`, `scenarios.jsonl`, `idempotency.jsonl`, `sessions/<id>.jsonl`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use dispatch_sim::events::{fold_log, EventPayload, EventSink, FoldError, SessionEvent};
use dispatch_sim::orchestrator::Session;
use dispatch_sim::scenario::Scenario;
use dispatch_sim::stats::RatingRecord;
use dispatch_sim::transcript::Mode;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("data directory {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("session log {path}: {source}")]
    Fold { path: PathBuf, source: FoldError },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub session_id: String,
    pub scenario_id: String,
    pub mode: Mode,
    pub created_ms: u64,
}

/// A stored response replayed for a repeated idempotency key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub key: String,
    pub route: String,
    pub status: u16,
    pub body: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRating {
    pub rating_id: String,
    pub record: RatingRecord,
}

/// Appends a line-per-record file. Each call issues one `write_all`.
fn append_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), StoreError> {
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item).expect("record serializes"));
        buf.push('\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    f.write_all(buf.as_bytes()).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}

/// Reads a JSONL file. A torn final line (no trailing newline, unparseable)
/// is cut off; any other bad line is an error.
fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let (mut offset, mut line_no) = (0u64, 0usize);
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            offset += n as u64;
            continue;
        }
        match serde_json::from_str(line.trim_end()) {
            Ok(v) if complete => out.push(v),
            Ok(_) | Err(_) if !complete => {
                let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
                f.set_len(offset).map_err(io_err(path))?;
                break;
            }
            Ok(v) => out.push(v),
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
        offset += n as u64;
    }
    Ok(out)
}

/// Live state of one session plus its log position.
#[derive(Debug)]
pub struct SessionSlot {
    pub session: Session,
    pub ratings: Vec<StoredRating>,
    log_path: PathBuf,
    next_seq: u64,
}

impl SessionSlot {
    pub fn sink(&mut self) -> LogSink<'_> {
        LogSink {
            path: &self.log_path,
            session_id: self.session.id.clone(),
            next_seq: &mut self.next_seq,
        }
    }

    /// The session and its sink, borrowed together.
    pub fn split(&mut self) -> (&mut Session, LogSink<'_>) {
        let session_id = self.session.id.clone();
        (
            &mut self.session,
            LogSink {
                path: &self.log_path,
                session_id,
                next_seq: &mut self.next_seq,
            },
        )
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }
}

/// Event sink writing numbered lines to a session log.
pub struct LogSink<'a> {
    path: &'a Path,
    session_id: String,
    next_seq: &'a mut u64,
}

impl EventSink for LogSink<'_> {
    fn append(&mut self, events: &[EventPayload]) -> Result<(), String> {
        let wall_time = now_ms();
        let lines: Vec<SessionEvent> = events
            .iter()
            .enumerate()
            .map(|(i, payload)| SessionEvent {
                session_id: self.session_id.clone(),
                seq: *self.next_seq + i as u64,
                payload: payload.clone(),
                wall_time,
            })
            .collect();
        append_lines(self.path, &lines).map_err(|e| e.to_string())?;
        *self.next_seq += events.len() as u64;
        Ok(())
    }
}

/// Sink for a log that does not exist yet.
pub struct NewLogSink {
    path: PathBuf,
    session_id: String,
    next_seq: u64,
}

impl EventSink for NewLogSink {
    fn append(&mut self, events: &[EventPayload]) -> Result<(), String> {
        LogSink {
            path: &self.path,
            session_id: self.session_id.clone(),
            next_seq: &mut self.next_seq,
        }
        .append(events)
    }
}

pub type SlotHandle = Arc<Mutex<SessionSlot>>;

pub struct Store {
    dir: PathBuf,
    scenarios: Mutex<BTreeMap<String, Scenario>>,
    index: Mutex<Vec<IndexEntry>>,
    sessions: Mutex<HashMap<String, SlotHandle>>,
    rating_pairs: Mutex<BTreeSet<(String, String)>>,
    idempotency: Mutex<HashMap<String, StoredResponse>>,
}

impl Store {
    /// Opens (creating if needed) the data directory and replays every log.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let sessions_dir = dir.join("sessions");
        fs::create_dir_all(&sessions_dir).map_err(io_err(&sessions_dir))?;
        // Probe writability up front rather than on the first request.
        let probe = dir.join(".write_probe");
        fs::write(&probe, b"").map_err(io_err(&probe))?;
        let _ = fs::remove_file(&probe);

        let scenarios: BTreeMap<String, Scenario> = read_lines::<Scenario>(&dir.join("scenarios.jsonl"))?
            .into_iter()
            .map(|s| (s.id.clone(), s))
            .collect();
        let index: Vec<IndexEntry> = read_lines(&dir.join("index.jsonl"))?;
        let mut sessions = HashMap::new();
        let mut pairs = BTreeSet::new();
        let mut live_index = Vec::new();
        for entry in index {
            let path = sessions_dir.join(format!("{}.jsonl", entry.session_id));
            let events: Vec<SessionEvent> = read_lines(&path)?;
            if events.is_empty() {
                // Index written but the created event never landed.
                continue;
            }
            let session = fold_log(&events).map_err(|source| StoreError::Fold {
                path: path.clone(),
                source,
            })?;
            let ratings: Vec<StoredRating> = events
                .iter()
                .filter_map(|e| match &e.payload {
                    EventPayload::Rating { rating_id, record } => Some(StoredRating {
                        rating_id: rating_id.clone(),
                        record: record.clone(),
                    }),
                    _ => None,
                })
                .collect();
            for r in &ratings {
                pairs.insert((r.record.case_id.clone(), r.record.rater_id.clone()));
            }
            let next_seq = events.last().map_or(0, |e| e.seq + 1);
            sessions.insert(
                entry.session_id.clone(),
                Arc::new(Mutex::new(SessionSlot {
                    session,
                    ratings,
                    log_path: path,
                    next_seq,
                })),
            );
            live_index.push(entry);
        }
        let idempotency = read_lines::<StoredResponse>(&dir.join("idempotency.jsonl"))?
            .into_iter()
            .map(|r| (r.key.clone(), r))
            .collect();
        Ok(Self {
            dir,
            scenarios: Mutex::new(scenarios),
            index: Mutex::new(live_index),
            sessions: Mutex::new(sessions),
            rating_pairs: Mutex::new(pairs),
            idempotency: Mutex::new(idempotency),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn put_scenario(&self, scenario: &Scenario) -> Result<(), StoreError> {
        let mut map = self.scenarios.lock().unwrap();
        if !map.contains_key(&scenario.id) {
            append_lines(&self.dir.join("scenarios.jsonl"), std::slice::from_ref(scenario))?;
            map.insert(scenario.id.clone(), scenario.clone());
        }
        Ok(())
    }

    pub fn scenario(&self, id: &str) -> Option<Scenario> {
        self.scenarios.lock().unwrap().get(id).cloned()
    }

    /// Creates a session with the next free id. `create` runs the engine
    /// against a sink that writes the first log lines.
    pub fn create_session<E>(
        &self,
        scenario_id: &str,
        mode: Mode,
        create: impl FnOnce(&str, &mut NewLogSink) -> Result<Session, E>,
    ) -> Result<Result<SlotHandle, E>, StoreError> {
        // Holding the map lock makes id allocation and registration atomic.
        let mut sessions = self.sessions.lock().unwrap();
        let mut index = self.index.lock().unwrap();
        let mut n = index.len() + 1;
        let id = loop {
            let id = format!("sess-{n:06}");
            let path = self.dir.join("sessions").join(format!("{id}.jsonl"));
            if !sessions.contains_key(&id) && !path.exists() {
                break id;
            }
            n += 1;
        };
        let path = self.dir.join("sessions").join(format!("{id}.jsonl"));
        let mut sink = NewLogSink {
            path: path.clone(),
            session_id: id.clone(),
            next_seq: 0,
        };
        let session = match create(&id, &mut sink) {
            Ok(s) => s,
            Err(e) => return Ok(Err(e)),
        };
        let entry = IndexEntry {
            session_id: id.clone(),
            scenario_id: scenario_id.to_string(),
            mode,
            created_ms: now_ms(),
        };
        append_lines(&self.dir.join("index.jsonl"), std::slice::from_ref(&entry))?;
        index.push(entry);
        let slot = Arc::new(Mutex::new(SessionSlot {
            session,
            ratings: Vec::new(),
            log_path: path,
            next_seq: sink.next_seq,
        }));
        sessions.insert(id, slot.clone());
        Ok(Ok(slot))
    }

    pub fn slot(&self, id: &str) -> Option<SlotHandle> {
        self.sessions.lock().unwrap().get(id).cloned()
    }

    /// Session ids in creation order.
    pub fn session_ids(&self) -> Vec<String> {
        self.index
            .lock()
            .unwrap()
            .iter()
            .map(|e| e.session_id.clone())
            .collect()
    }

    /// Current state of every session, in creation order.
    pub fn snapshot(&self) -> Vec<Session> {
        self.session_ids()
            .iter()
            .filter_map(|id| self.slot(id))
            .map(|s| s.lock().unwrap().session.clone())
            .collect()
    }

    /// Reserves the (case, rater) pair; false when already taken.
    pub fn reserve_rating_pair(&self, case_id: &str, rater_id: &str) -> bool {
        self.rating_pairs
            .lock()
            .unwrap()
            .insert((case_id.to_string(), rater_id.to_string()))
    }

    pub fn release_rating_pair(&self, case_id: &str, rater_id: &str) {
        self.rating_pairs
            .lock()
            .unwrap()
            .remove(&(case_id.to_string(), rater_id.to_string()));
    }

    pub fn rating_count(&self) -> usize {
        self.rating_pairs.lock().unwrap().len()
    }

    pub fn idempotent(&self, key: &str) -> Option<StoredResponse> {
        self.idempotency.lock().unwrap().get(key).cloned()
    }

    pub fn remember(&self, response: StoredResponse) -> Result<(), StoreError> {
        let mut map = self.idempotency.lock().unwrap();
        append_lines(&self.dir.join("idempotency.jsonl"), std::slice::from_ref(&response))?;
        map.insert(response.key.clone(), response);
        Ok(())
    }

    /// Every session's rating records, in session order.
    pub fn ratings(&self) -> Vec<RatingRecord> {
        self.session_ids()
            .iter()
            .filter_map(|id| self.slot(id))
            .flat_map(|s| {
                s.lock()
                    .unwrap()
                    .ratings
                    .iter()
                    .map(|r| r.record.clone())
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Reads a session log from disk without opening a store.
pub fn read_session_log(path: &Path) -> Result<Vec<SessionEvent>, StoreError> {
    read_lines(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        n: u32,
    }

    #[test]
    fn torn_tail_is_cut() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        append_lines(&path, &[Row { n: 1 }, Row { n: 2 }]).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"n\":3").unwrap();
        let rows: Vec<Row> = read_lines(&path).unwrap();
        assert_eq!(rows, vec![Row { n: 1 }, Row { n: 2 }]);
        append_lines(&path, &[Row { n: 4 }]).unwrap();
        let rows: Vec<Row> = read_lines(&path).unwrap();
        assert_eq!(rows.len(), 3);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        fs::write(&path, "{\"n\":1}\nnope\n{\"n\":2}\n").unwrap();
        assert!(matches!(
            read_lines::<Row>(&path),
            Err(StoreError::Corrupt { line: 2, .. })
        ));
    }

    #[test]
    fn missing_file_reads_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_lines::<Row>(&dir.path().join("none.jsonl")).unwrap().is_empty());
    }
}
