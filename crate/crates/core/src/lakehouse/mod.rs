//! Versioned tables over an object store.
//!
//! Each commit is one JSON object at `tables/{table}/_log/{version:020}.json`,
//! created with a conditional put. The put is the only concurrency control:
//! whoever creates version `v + 1` first wins, everyone else rebases.

mod table;

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lakeformat::{ByteSource, ColumnSchema, FormatError, LakeFile};
use crate::objectstore::{ObjectKey, ObjectStore, StoreError};

pub use table::{AuditReport, Table, DEFAULT_MAX_RETRIES};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartitionKey {
    pub symbol: String,
    pub date: NaiveDate,
}

impl PartitionKey {
    pub fn new(symbol: &str, date: NaiveDate) -> Self {
        PartitionKey {
            symbol: symbol.to_string(),
            date,
        }
    }

    /// Partition of an event: UTC day of `floor(event_time_us / 86_400_000_000)`.
    pub fn for_event(symbol: &str, event_time_us: i64) -> Self {
        Self::new(symbol, crate::time::date_of(event_time_us))
    }

    /// `symbol=SYM/date=YYYY-MM-DD`
    pub fn render(&self) -> String {
        format!("symbol={}/date={}", self.symbol, self.date.format("%Y-%m-%d"))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (sym, date) = s.strip_prefix("symbol=")?.split_once("/date=")?;
        if !crate::ingest::is_valid_symbol(sym) || date.len() != 10 {
            return None;
        }
        Some(Self::new(sym, NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?))
    }

    pub fn day_number(&self) -> i64 {
        crate::time::day_number_of(self.date)
    }
}

impl fmt::Display for PartitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddFile {
    pub path: ObjectKey,
    pub partition: PartitionKey,
    pub rows: u64,
    pub bytes: u64,
    pub min_event_time_us: i64,
    pub max_event_time_us: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    AddFile(AddFile),
    RemoveFile { path: ObjectKey },
    SetSchema { schema_id: String, columns: Vec<ColumnSchema> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub version: u64,
    pub parent: u64,
    pub committed_at_us: i64,
    pub actions: Vec<Action>,
    pub committer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Snapshot {
    pub version: u64,
    /// Keyed by path.
    pub live_files: BTreeMap<String, AddFile>,
    pub schema_id: String,
    pub columns: Vec<ColumnSchema>,
}

impl Snapshot {
    /// Applies one entry. Entries are validated at commit time; replaying an
    /// already-committed log is total.
    pub fn apply(&mut self, entry: &LogEntry) {
        for a in &entry.actions {
            match a {
                Action::AddFile(f) => {
                    self.live_files.insert(f.path.to_string(), f.clone());
                }
                Action::RemoveFile { path } => {
                    self.live_files.remove(path.as_str());
                }
                Action::SetSchema { schema_id, columns } => {
                    self.schema_id = schema_id.clone();
                    self.columns = columns.clone();
                }
            }
        }
        self.version = entry.version;
    }

    pub fn fold<'a>(entries: impl IntoIterator<Item = &'a LogEntry>) -> Snapshot {
        let mut s = Snapshot::default();
        for e in entries {
            s.apply(e);
        }
        s
    }

    /// Checks `actions` against this state: adds must be new, removes must be
    /// live, and no path may appear twice.
    pub fn validate(&self, actions: &[Action]) -> Result<(), LakeError> {
        let invalid = |m: String| Err(LakeError::InvalidAction(m));
        if actions.is_empty() {
            return invalid("empty action list".into());
        }
        let mut touched = std::collections::HashSet::new();
        for a in actions {
            match a {
                Action::AddFile(f) => {
                    if f.rows == 0 {
                        return invalid(format!("{}: rows must be >= 1", f.path));
                    }
                    if f.min_event_time_us > f.max_event_time_us {
                        return invalid(format!("{}: min_event_time_us > max_event_time_us", f.path));
                    }
                    if self.live_files.contains_key(f.path.as_str()) {
                        return invalid(format!("{} is already live", f.path));
                    }
                    if !touched.insert(f.path.as_str()) {
                        return invalid(format!("{} appears twice", f.path));
                    }
                }
                Action::RemoveFile { path } => {
                    if !self.live_files.contains_key(path.as_str()) {
                        return invalid(format!("{path} is not live at version {}", self.version));
                    }
                    if !touched.insert(path.as_str()) {
                        return invalid(format!("{path} appears twice"));
                    }
                }
                Action::SetSchema { .. } => return invalid("schema is fixed at table creation".into()),
            }
        }
        Ok(())
    }

    /// Live files for `symbols` that can hold events in `[t0, t1)`, sorted by
    /// (partition, path). Prunes on partition date first, then file time stats.
    pub fn list_files(&self, t0: i64, t1: i64, symbols: &[String]) -> Vec<AddFile> {
        if t0 >= t1 || symbols.is_empty() {
            return Vec::new();
        }
        let (d0, d1) = (crate::time::day_number(t0), crate::time::day_number(t1 - 1));
        let mut out: Vec<AddFile> = self
            .live_files
            .values()
            .filter(|f| symbols.contains(&f.partition.symbol))
            .filter(|f| (d0..=d1).contains(&f.partition.day_number()))
            .filter(|f| f.min_event_time_us < t1 && f.max_event_time_us >= t0)
            .cloned()
            .collect();
        out.sort_by(|a, b| (&a.partition, a.path.as_str()).cmp(&(&b.partition, b.path.as_str())));
        out
    }

    pub fn total_rows(&self) -> u64 {
        self.live_files.values().map(|f| f.rows).sum()
    }
}

/// Range reads of one stored object, sized from its log entry so no HEAD is
/// needed.
pub struct ObjectSource<'a> {
    pub store: &'a dyn ObjectStore,
    pub key: &'a ObjectKey,
    pub len: u64,
}

impl ByteSource for ObjectSource<'_> {
    fn len(&self) -> std::io::Result<u64> {
        Ok(self.len)
    }

    fn read_range(&self, range: std::ops::Range<u64>) -> std::io::Result<Vec<u8>> {
        let want = range.end - range.start;
        let bytes = self.store.get_range(self.key, range).map_err(|e| match e {
            StoreError::NotFound(k) => std::io::Error::new(std::io::ErrorKind::NotFound, k),
            other => std::io::Error::other(other.to_string()),
        })?;
        if bytes.len() as u64 != want {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("{}: short read ({} of {want} bytes)", self.key, bytes.len()),
            ));
        }
        Ok(bytes)
    }
}

/// Reads a live data file, fetching only the projected chunks.
pub fn read_data_file(
    store: &dyn ObjectStore,
    file: &AddFile,
    projection: Option<&[&str]>,
) -> Result<LakeFile, FormatError> {
    let src = ObjectSource {
        store,
        key: &file.path,
        len: file.bytes,
    };
    crate::lakeformat::read_file(&src, projection)
}

#[derive(Debug, Error)]
pub enum LakeError {
    #[error("table {0} is already initialized")]
    AlreadyInitialized(String),
    #[error("table {0} is not initialized")]
    NotInitialized(String),
    #[error("gave up after {attempts} conflicting commit attempts")]
    CommitConflictExhausted { attempts: u32 },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("no version {requested} (current is {current})")]
    NoSuchVersion { requested: u64, current: u64 },
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl LakeError {
    pub fn kind(&self) -> &'static str {
        match self {
            LakeError::AlreadyInitialized(_) => "AlreadyInitialized",
            LakeError::NotInitialized(_) => "NotInitialized",
            LakeError::CommitConflictExhausted { .. } => "CommitConflictExhausted",
            LakeError::InvalidAction(_) => "InvalidAction",
            LakeError::NoSuchVersion { .. } => "NoSuchVersion",
            LakeError::CorruptLog(_) => "CorruptLog",
            LakeError::Store(e) => e.kind(),
        }
    }
}
