//! Durable append-only buffer between connectors and the exporter.
//!
//! Layout per connector under the staging root:
//!
//! ```text
//! {connector_id}/seg-{start_offset:020}.jsonl   record lines
//! {connector_id}/head.json                      next offset visible to readers
//! {connector_id}/checkpoint.json                exporter's committed offset
//! {connector_id}/lock                           writer session lock
//! ```
//!
//! A batch becomes visible only when `head.json` is atomically replaced after
//! the record lines are synced; anything past the head is a torn append and is
//! truncated when the next writer session opens.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::{self, FaultInjector, InjectedCrash};
use crate::fsutil::{write_atomic, LockFile};
use crate::ingest::{MarketEvent, Side, StreamKind};

pub const DEFAULT_MAX_SEGMENT_RECORDS: u64 = 10_000;

#[derive(Debug, Error)]
pub enum StagingError {
    #[error("connector {0:?} already has an active session")]
    SessionLockHeld(String),
    #[error("staging storage is full")]
    StorageFull,
    #[error("offset {offset} is beyond tail+1 ({next})")]
    OffsetOutOfRange { offset: u64, next: u64 },
    #[error("offset {0} was pruned")]
    Pruned(u64),
    #[error("checkpoint regression: stored {stored}, requested {requested}")]
    CheckpointRegression { stored: u64, requested: u64 },
    #[error("checkpoint {requested} is beyond tail+1 ({next})")]
    CheckpointBeyondTail { requested: u64, next: u64 },
    #[error("corrupt staging data: {0}")]
    Corrupt(String),
    #[error("invalid connector id {0:?}")]
    InvalidConnector(String),
    #[error(transparent)]
    Crash(#[from] InjectedCrash),
    #[error("staging io: {0}")]
    Io(io::Error),
}

impl From<io::Error> for StagingError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::StorageFull {
            StagingError::StorageFull
        } else {
            StagingError::Io(e)
        }
    }
}

impl StagingError {
    pub fn kind(&self) -> &'static str {
        match self {
            StagingError::SessionLockHeld(_) => "SessionLockHeld",
            StagingError::StorageFull => "StorageFull",
            StagingError::OffsetOutOfRange { .. } => "OffsetOutOfRange",
            StagingError::Pruned(_) => "Pruned",
            StagingError::CheckpointRegression { .. } => "CheckpointRegression",
            StagingError::CheckpointBeyondTail { .. } => "CheckpointBeyondTail",
            StagingError::Corrupt(_) => "Corrupt",
            StagingError::InvalidConnector(_) => "InvalidConnector",
            StagingError::Crash(_) => "InjectedCrash",
            StagingError::Io(_) => "StagingUnavailable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedRecord {
    pub offset: u64,
    pub event: MarketEvent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub connector_id: String,
    pub start_offset: u64,
    pub record_count: u64,
    pub sealed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportCheckpoint {
    pub connector_id: String,
    pub committed_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffsetRange {
    pub first_offset: u64,
    pub last_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Drained {
    pub records: Vec<StagedRecord>,
    pub next_checkpoint: u64,
}

/// On-disk record line: the event's fields plus `offset`.
#[derive(Serialize, Deserialize)]
struct RecordLine<'a> {
    offset: u64,
    source: std::borrow::Cow<'a, str>,
    stream: StreamKind,
    symbol: std::borrow::Cow<'a, str>,
    event_time_us: i64,
    ingest_time_us: i64,
    sequence: u64,
    event_id: std::borrow::Cow<'a, str>,
    price_e8: i64,
    qty_e8: i64,
    side: Side,
}

impl<'a> RecordLine<'a> {
    fn from_event(offset: u64, e: &'a MarketEvent) -> Self {
        RecordLine {
            offset,
            source: e.source.as_str().into(),
            stream: e.stream,
            symbol: e.symbol.as_str().into(),
            event_time_us: e.event_time_us,
            ingest_time_us: e.ingest_time_us,
            sequence: e.sequence,
            event_id: e.event_id.as_str().into(),
            price_e8: e.price_e8,
            qty_e8: e.qty_e8,
            side: e.side,
        }
    }

    fn into_record(self) -> StagedRecord {
        StagedRecord {
            offset: self.offset,
            event: MarketEvent {
                source: self.source.into_owned(),
                stream: self.stream,
                symbol: self.symbol.into_owned(),
                event_time_us: self.event_time_us,
                ingest_time_us: self.ingest_time_us,
                sequence: self.sequence,
                event_id: self.event_id.into_owned(),
                price_e8: self.price_e8,
                qty_e8: self.qty_e8,
                side: self.side,
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Head {
    next_offset: u64,
}

#[derive(Debug, Clone)]
pub struct StagingStore {
    root: PathBuf,
    max_segment_records: u64,
    faults: Arc<FaultInjector>,
}

fn segment_name(start: u64) -> String {
    format!("seg-{start:020}.jsonl")
}

fn parse_segment_name(name: &str) -> Option<u64> {
    name.strip_prefix("seg-")?.strip_suffix(".jsonl")?.parse().ok()
}

impl StagingStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StagingStore {
            root: root.into(),
            max_segment_records: DEFAULT_MAX_SEGMENT_RECORDS,
            faults: Arc::new(FaultInjector::disabled()),
        }
    }

    pub fn with_max_segment_records(mut self, n: u64) -> Self {
        self.max_segment_records = n.max(1);
        self
    }

    pub fn with_faults(mut self, faults: Arc<FaultInjector>) -> Self {
        self.faults = faults;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, connector_id: &str) -> Result<PathBuf, StagingError> {
        if !crate::objectstore::is_valid_segment(connector_id) || connector_id.starts_with('.') {
            return Err(StagingError::InvalidConnector(connector_id.to_string()));
        }
        Ok(self.root.join(connector_id))
    }

    /// Acquire the single-writer session for `connector_id`, truncating any
    /// torn append left by a crashed predecessor.
    pub fn open_session(&self, connector_id: &str) -> Result<StagingSession, StagingError> {
        let dir = self.dir(connector_id)?;
        fs::create_dir_all(&dir)?;
        let lock = LockFile::try_acquire(&dir.join("lock"))?
            .ok_or_else(|| StagingError::SessionLockHeld(connector_id.to_string()))?;
        let mut session = StagingSession {
            store: self.clone(),
            connector_id: connector_id.to_string(),
            dir,
            _lock: lock,
            next_offset: 0,
            current: None,
        };
        session.recover()?;
        Ok(session)
    }

    /// Next offset to be assigned (= last appended offset + 1).
    pub fn next_offset(&self, connector_id: &str) -> Result<u64, StagingError> {
        let path = self.dir(connector_id)?.join("head.json");
        match fs::read(&path) {
            Ok(bytes) => {
                let head: Head = serde_json::from_slice(&bytes)
                    .map_err(|e| StagingError::Corrupt(format!("{}: {e}", path.display())))?;
                Ok(head.next_offset)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(e.into()),
        }
    }

    pub fn segments(&self, connector_id: &str) -> Result<Vec<Segment>, StagingError> {
        let dir = self.dir(connector_id)?;
        let starts = list_segment_starts(&dir)?;
        let next = self.next_offset(connector_id)?;
        let mut out = Vec::with_capacity(starts.len());
        for (i, start) in starts.iter().enumerate() {
            let end = starts.get(i + 1).copied().unwrap_or(next).min(next);
            let count = end.saturating_sub(*start);
            let last = i + 1 == starts.len();
            out.push(Segment {
                connector_id: connector_id.to_string(),
                start_offset: *start,
                record_count: count,
                sealed: !last || count >= self.max_segment_records,
            });
        }
        Ok(out)
    }

    pub fn connectors(&self) -> Result<Vec<String>, StagingError> {
        let mut out = Vec::new();
        match fs::read_dir(&self.root) {
            Ok(rd) => {
                for entry in rd {
                    let entry = entry?;
                    if entry.file_type()?.is_dir() {
                        if let Some(name) = entry.file_name().to_str() {
                            out.push(name.to_string());
                        }
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        out.sort();
        Ok(out)
    }

    /// Up to `max_records` records starting at `offset`, in offset order.
    pub fn read_from(
        &self,
        connector_id: &str,
        offset: u64,
        max_records: usize,
    ) -> Result<Vec<StagedRecord>, StagingError> {
        let dir = self.dir(connector_id)?;
        let next = self.next_offset(connector_id)?;
        if offset > next {
            return Err(StagingError::OffsetOutOfRange { offset, next });
        }
        let want = ((next - offset) as usize).min(max_records);
        let mut out = Vec::with_capacity(want);
        if want == 0 {
            return Ok(out);
        }
        let starts = list_segment_starts(&dir)?;
        let first_idx = match starts.iter().rposition(|s| *s <= offset) {
            Some(i) => i,
            None => return Err(StagingError::Pruned(offset)),
        };
        let mut expect = offset;
        for start in &starts[first_idx..] {
            let file = File::open(dir.join(segment_name(*start)))?;
            let mut skip = expect.saturating_sub(*start);
            for line in BufReader::new(file).lines() {
                if out.len() == want {
                    break;
                }
                let line = line?;
                if skip > 0 {
                    skip -= 1;
                    continue;
                }
                let rec: RecordLine = serde_json::from_str(&line)
                    .map_err(|e| StagingError::Corrupt(format!("segment {start}: {e}")))?;
                if rec.offset != expect {
                    return Err(StagingError::Corrupt(format!(
                        "expected offset {expect}, found {}",
                        rec.offset
                    )));
                }
                out.push(rec.into_record());
                expect += 1;
            }
            if out.len() == want {
                break;
            }
        }
        if out.len() != want {
            return Err(StagingError::Corrupt(format!(
                "head says {next} but only {} records readable from {offset}",
                out.len()
            )));
        }
        Ok(out)
    }

    pub fn checkpoint(&self, connector_id: &str) -> Result<ExportCheckpoint, StagingError> {
        let path = self.dir(connector_id)?.join("checkpoint.json");
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| StagingError::Corrupt(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(ExportCheckpoint {
                connector_id: connector_id.to_string(),
                committed_offset: 0,
            }),
            Err(e) => Err(e.into()),
        }
    }

    /// Records from the committed checkpoint onward. Does not move the checkpoint.
    pub fn drain_batch(&self, connector_id: &str, max_records: usize) -> Result<Drained, StagingError> {
        let committed = self.checkpoint(connector_id)?.committed_offset;
        let records = self.read_from(connector_id, committed, max_records)?;
        let next_checkpoint = committed + records.len() as u64;
        Ok(Drained {
            records,
            next_checkpoint,
        })
    }

    pub fn commit_checkpoint(&self, connector_id: &str, next_checkpoint: u64) -> Result<(), StagingError> {
        let stored = self.checkpoint(connector_id)?.committed_offset;
        if next_checkpoint < stored {
            return Err(StagingError::CheckpointRegression {
                stored,
                requested: next_checkpoint,
            });
        }
        let next = self.next_offset(connector_id)?;
        if next_checkpoint > next {
            return Err(StagingError::CheckpointBeyondTail {
                requested: next_checkpoint,
                next,
            });
        }
        if next_checkpoint == stored && self.dir(connector_id)?.join("checkpoint.json").exists() {
            return Ok(());
        }
        let cp = ExportCheckpoint {
            connector_id: connector_id.to_string(),
            committed_offset: next_checkpoint,
        };
        let bytes = serde_json::to_vec(&cp).expect("checkpoint serializes");
        write_atomic(&self.dir(connector_id)?.join("checkpoint.json"), &bytes)?;
        Ok(())
    }

    /// Delete sealed segments whose records are all below the committed
    /// checkpoint. Returns the number of segments removed.
    pub fn prune(&self, connector_id: &str) -> Result<usize, StagingError> {
        let committed = self.checkpoint(connector_id)?.committed_offset;
        let dir = self.dir(connector_id)?;
        let mut removed = 0;
        for seg in self.segments(connector_id)? {
            if seg.sealed && seg.start_offset + seg.record_count <= committed {
                fs::remove_file(dir.join(segment_name(seg.start_offset)))?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}

fn list_segment_starts(dir: &Path) -> Result<Vec<u64>, StagingError> {
    let mut starts = Vec::new();
    match fs::read_dir(dir) {
        Ok(rd) => {
            for entry in rd {
                let entry = entry?;
                if let Some(start) = entry.file_name().to_str().and_then(parse_segment_name) {
                    starts.push(start);
                }
            }
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(e.into()),
    }
    starts.sort_unstable();
    Ok(starts)
}

struct OpenSegment {
    count: u64,
    file: File,
}

/// Exclusive writer for one connector.
pub struct StagingSession {
    store: StagingStore,
    connector_id: String,
    dir: PathBuf,
    _lock: LockFile,
    next_offset: u64,
    current: Option<OpenSegment>,
}

impl std::fmt::Debug for StagingSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StagingSession")
            .field("connector_id", &self.connector_id)
            .field("next_offset", &self.next_offset)
            .finish()
    }
}

impl StagingSession {
    pub fn connector_id(&self) -> &str {
        &self.connector_id
    }

    pub fn next_offset(&self) -> u64 {
        self.next_offset
    }

    /// Cut every segment back to the published head.
    fn recover(&mut self) -> Result<(), StagingError> {
        self.current = None;
        let head = self.store.next_offset(&self.connector_id)?;
        let starts = list_segment_starts(&self.dir)?;
        for (i, start) in starts.iter().enumerate() {
            let path = self.dir.join(segment_name(*start));
            if *start >= head {
                fs::remove_file(&path)?;
                continue;
            }
            let end = starts.get(i + 1).map_or(head, |next| (*next).min(head));
            truncate_to_lines(&path, end - start)?;
        }
        self.next_offset = head;
        if let Some(start) = list_segment_starts(&self.dir)?.last().copied() {
            let count = head - start;
            if count < self.store.max_segment_records {
                let file = OpenOptions::new().append(true).open(self.dir.join(segment_name(start)))?;
                self.current = Some(OpenSegment { count, file });
            }
        }
        Ok(())
    }

    /// Append `events` with consecutive offsets. All or nothing: on error or
    /// crash the batch stays invisible. `None` for an empty batch.
    pub fn append_batch(&mut self, events: &[MarketEvent]) -> Result<Option<OffsetRange>, StagingError> {
        if events.is_empty() {
            return Ok(None);
        }
        match self.write_batch(events) {
            Ok(range) => Ok(Some(range)),
            Err(StagingError::Crash(c)) => Err(StagingError::Crash(c)),
            Err(e) => {
                let _ = self.recover();
                Err(e)
            }
        }
    }

    fn write_batch(&mut self, events: &[MarketEvent]) -> Result<OffsetRange, StagingError> {
        let first = self.next_offset;
        let max = self.store.max_segment_records;
        let mut offset = first;
        let mut remaining = events;
        while !remaining.is_empty() {
            if self.current.as_ref().is_none_or(|s| s.count >= max) {
                let path = self.dir.join(segment_name(offset));
                let file = OpenOptions::new().create(true).append(true).open(&path)?;
                self.current = Some(OpenSegment { count: 0, file });
            }
            let seg = self.current.as_mut().expect("segment open");
            let room = (max - seg.count) as usize;
            let (now, rest) = remaining.split_at(room.min(remaining.len()));
            let mut buf = Vec::with_capacity(now.len() * 256);
            for e in now {
                serde_json::to_writer(&mut buf, &RecordLine::from_event(offset, e)).expect("record serializes");
                buf.push(b'\n');
                offset += 1;
            }
            seg.file.write_all(&buf)?;
            seg.file.sync_data()?;
            seg.count += now.len() as u64;
            remaining = rest;
        }

        self.store.faults.hit(fault::MID_APPEND, Some(&self.connector_id))?;

        let head = serde_json::to_vec(&Head { next_offset: offset }).expect("head serializes");
        write_atomic(&self.dir.join("head.json"), &head)?;
        self.next_offset = offset;
        Ok(OffsetRange {
            first_offset: first,
            last_offset: offset - 1,
        })
    }
}

/// Keep the first `keep` complete lines of `path`, dropping the rest
/// (including a partial trailing line).
fn truncate_to_lines(path: &Path, keep: u64) -> io::Result<()> {
    let bytes = fs::read(path)?;
    let mut lines = 0u64;
    let mut cut = 0usize;
    if keep > 0 {
        for (i, b) in bytes.iter().enumerate() {
            if *b == b'\n' {
                lines += 1;
                if lines == keep {
                    cut = i + 1;
                    break;
                }
            }
        }
        if lines < keep {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{} holds {lines} complete lines, head needs {keep}", path.display()),
            ));
        }
    }
    if cut != bytes.len() {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(cut as u64)?;
        f.sync_all()?;
    }
    Ok(())
}
