use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    normalize, replay_file, ConnectorConfig, ConnectorKind, Decision, IngestError, RawEvent, SequenceCounter,
    SyntheticStream, TokenBucket,
};
use crate::clock::Clock;
use crate::fault::{self, FaultInjector};
use crate::fsutil::write_atomic;
use crate::staging::{StagingError, StagingStore};

/// How `ingest_time_us` is stamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestStamp {
    /// Read the runtime clock at normalization time.
    Clock,
    /// `event_time_us + latency`: a simulated capture delay that is stable
    /// across restarts, used by reproducible scenarios.
    EventTimePlus(i64),
}

/// Everything a connector session needs besides its config.
#[derive(Clone)]
pub struct ConnectorRuntime {
    pub staging: StagingStore,
    /// Directory holding `{connector_id}/position.json`.
    pub state_dir: PathBuf,
    pub clock: Arc<dyn Clock>,
    pub faults: Arc<FaultInjector>,
    pub batch_size: usize,
    /// Save the source position after this many appended batches.
    pub checkpoint_every: usize,
    pub stamp: IngestStamp,
    /// Stop before the first raw event later than this, leaving the rest for
    /// a later session. Models a live feed that has only produced so far.
    pub until_event_time_us: Option<i64>,
}

impl ConnectorRuntime {
    pub fn new(staging: StagingStore, state_dir: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> Self {
        ConnectorRuntime {
            staging,
            state_dir: state_dir.into(),
            clock,
            faults: Arc::new(FaultInjector::disabled()),
            batch_size: 1000,
            checkpoint_every: 1,
            stamp: IngestStamp::Clock,
            until_event_time_us: None,
        }
    }
}

/// Where the connector resumes after a restart: raw events already handed
/// to staging and the sequence counters at that point.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectorPosition {
    pub raw_index: u64,
    pub sequences: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub events_appended: u64,
    pub last_offset: Option<u64>,
    pub resumed_from: u64,
    /// Raw events that failed normalization and were skipped.
    pub rejected: u64,
}

fn position_path(dir: &Path, connector_id: &str) -> PathBuf {
    dir.join(connector_id).join("position.json")
}

pub fn load_position(dir: &Path, connector_id: &str) -> Result<ConnectorPosition, IngestError> {
    match fs::read(position_path(dir, connector_id)) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map_err(|e| IngestError::Io(io::Error::new(io::ErrorKind::InvalidData, e))),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(ConnectorPosition::default()),
        Err(e) => Err(e.into()),
    }
}

fn save_position(dir: &Path, connector_id: &str, pos: &ConnectorPosition) -> Result<(), IngestError> {
    let bytes = serde_json::to_vec(pos).expect("position serializes");
    write_atomic(&position_path(dir, connector_id), &bytes)?;
    Ok(())
}

fn staging_err(e: StagingError) -> IngestError {
    match e {
        StagingError::Crash(c) => IngestError::Crash(c),
        other => IngestError::StagingUnavailable(other),
    }
}

/// Run one connector session to the end of its source.
///
/// Delivery is at-least-once: batches appended after the last saved position
/// are appended again when a crashed session is restarted.
pub fn run_connector(config: &ConnectorConfig, rt: &ConnectorRuntime) -> Result<SessionSummary, IngestError> {
    config.validate()?;
    let mut session = rt.staging.open_session(&config.connector_id).map_err(staging_err)?;

    let mut pos = load_position(&rt.state_dir, &config.connector_id)?;
    let mut seq = SequenceCounter::from_map(&pos.sequences);
    let mut bucket = TokenBucket::new(config.rate_limit.rate_per_s, config.rate_limit.burst, rt.clock.now_us());
    let mut summary = SessionSummary {
        resumed_from: pos.raw_index,
        ..Default::default()
    };

    let source: Box<dyn Iterator<Item = RawEvent>> = match config.kind {
        ConnectorKind::Synthetic => {
            let mut s = SyntheticStream::new(config);
            s.advance(pos.raw_index);
            Box::new(s)
        }
        ConnectorKind::Replay => {
            let raw = replay_file(config.replay_path.as_deref().unwrap_or_default())?;
            Box::new(raw.into_iter().skip(pos.raw_index as usize))
        }
    };
    let limit = rt.until_event_time_us.unwrap_or(i64::MAX);
    let mut source = source.take_while(|r| r.event_time_us <= limit).peekable();

    let mut since_save = 0usize;
    let batch_size = rt.batch_size.max(1);
    while source.peek().is_some() {
        let chunk: Vec<RawEvent> = source.by_ref().take(batch_size).collect();
        let mut batch = Vec::with_capacity(chunk.len());
        for r in &chunk {
            while bucket.take(rt.clock.now_us()) == Decision::Deny {
                rt.clock.sleep_until(bucket.next_available_us());
            }
            let ingest_time = match rt.stamp {
                IngestStamp::Clock => rt.clock.now_us(),
                IngestStamp::EventTimePlus(lat) => r.event_time_us + lat,
            };
            match normalize(r, config, ingest_time) {
                Ok(mut e) => {
                    seq.assign(&mut e);
                    batch.push(e);
                }
                Err(_) => summary.rejected += 1,
            }
        }
        if let Some(range) = session.append_batch(&batch).map_err(staging_err)? {
            summary.last_offset = Some(range.last_offset);
        }
        summary.events_appended += batch.len() as u64;
        pos.raw_index += chunk.len() as u64;

        rt.faults.hit(fault::AFTER_APPEND_BEFORE_POSITION, Some(&config.connector_id))?;

        since_save += 1;
        if since_save >= rt.checkpoint_every.max(1) {
            pos.sequences = seq.to_map();
            save_position(&rt.state_dir, &config.connector_id, &pos)?;
            since_save = 0;
        }
    }
    pos.sequences = seq.to_map();
    save_position(&rt.state_dir, &config.connector_id, &pos)?;
    if summary.last_offset.is_none() {
        summary.last_offset = session.next_offset().checked_sub(1);
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::fault::CrashPoint;
    use crate::ingest::generate_synthetic;
    use std::collections::HashSet;

    fn runtime(dir: &Path, faults: Arc<FaultInjector>) -> ConnectorRuntime {
        let mut rt = ConnectorRuntime::new(
            StagingStore::new(dir.join("staging")).with_faults(faults.clone()),
            dir.join("ingest"),
            Arc::new(SimClock::new(0)),
        );
        rt.faults = faults;
        rt
    }

    fn synthetic(count: u64, dup: u32) -> ConnectorConfig {
        let mut c = ConnectorConfig::synthetic("c1", "synth", &[("BTCUSD", "BTC-USD"), ("ETHUSD", "ETH-USD")]);
        c.seed = 42;
        c.count = count;
        c.dup_prob_bp = dup;
        c
    }

    #[test]
    fn horizon_splits_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let mut rt = runtime(dir.path(), Arc::default());
        let cfg = synthetic(100, 0);
        let raw = generate_synthetic(&cfg);
        rt.until_event_time_us = Some(raw[39].event_time_us);
        assert_eq!(run_connector(&cfg, &rt).unwrap().events_appended, 40);
        assert_eq!(run_connector(&cfg, &rt).unwrap().events_appended, 0);
        rt.until_event_time_us = None;
        let s = run_connector(&cfg, &rt).unwrap();
        assert_eq!((s.resumed_from, s.events_appended), (40, 60));
    }

    #[test]
    fn appends_every_event() {
        let dir = tempfile::tempdir().unwrap();
        let rt = runtime(dir.path(), Arc::default());
        let s = run_connector(&synthetic(100, 0), &rt).unwrap();
        assert_eq!(s.events_appended, 100);
        assert_eq!(s.last_offset, Some(99));
        // A second session has nothing left to send.
        let s = run_connector(&synthetic(100, 0), &rt).unwrap();
        assert_eq!(s.events_appended, 0);
        assert_eq!(s.resumed_from, 100);
    }

    #[test]
    fn empty_replay_appends_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let mut c = synthetic(0, 0);
        c.kind = ConnectorKind::Replay;
        c.replay_path = Some(path.to_string_lossy().into_owned());
        let s = run_connector(&c, &runtime(dir.path(), Arc::default())).unwrap();
        assert_eq!(s.events_appended, 0);
        assert_eq!(s.last_offset, None);
    }

    #[test]
    fn crash_restart_reappends_suffix() {
        let dir = tempfile::tempdir().unwrap();
        // Batches of 10, position saved every 2 batches, crash after the 5th
        // append: 50 appended, last saved position 40.
        let faults = Arc::new(FaultInjector::new([CrashPoint {
            site: fault::AFTER_APPEND_BEFORE_POSITION.into(),
            scope: Some("c1".into()),
            hit: 5,
        }]));
        let mut rt = runtime(dir.path(), faults);
        rt.batch_size = 10;
        rt.checkpoint_every = 2;
        rt.stamp = IngestStamp::EventTimePlus(1_000);

        let err = run_connector(&synthetic(100, 0), &rt).unwrap_err();
        assert!(matches!(err, IngestError::Crash(_)));
        assert_eq!(rt.staging.next_offset("c1").unwrap(), 50);
        assert_eq!(load_position(&rt.state_dir, "c1").unwrap().raw_index, 40);

        let s = run_connector(&synthetic(100, 0), &rt).unwrap();
        assert_eq!(s.resumed_from, 40);
        assert_eq!(s.events_appended, 60);

        let recs = rt.staging.read_from("c1", 0, usize::MAX).unwrap();
        assert_eq!(recs.len(), 110);
        let ids: HashSet<_> = recs.iter().map(|r| r.event.identity()).collect();
        assert_eq!(ids.len(), 100);
        // Redelivered copies are identical to the originals.
        assert_eq!(recs[40].event, recs[50].event);
    }

    #[test]
    fn rate_limit_advances_simulated_clock() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(SimClock::new(0));
        let mut rt = runtime(dir.path(), Arc::default());
        rt.clock = clock.clone();
        let mut c = synthetic(10, 0);
        c.rate_limit = crate::ingest::RateLimit { rate_per_s: 2, burst: 2 };
        run_connector(&c, &rt).unwrap();
        // 2 from the burst, 8 more at 2/s.
        assert_eq!(clock.now_us(), 4_000_000);
    }

    #[test]
    fn unknown_symbols_are_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"source":"x","stream":"trade","raw_symbol":"BTCUSD","event_time_us":5,"payload":{"price":"1","qty":"1","side":"buy","id":"a"}}"#,
                "\n",
                r#"{"source":"x","stream":"trade","raw_symbol":"DOGEUSD","event_time_us":6,"payload":{"price":"1","qty":"1","side":"buy","id":"b"}}"#,
                "\n"
            ),
        )
        .unwrap();
        let mut c = synthetic(0, 0);
        c.kind = ConnectorKind::Replay;
        c.replay_path = Some(path.to_string_lossy().into_owned());
        let s = run_connector(&c, &runtime(dir.path(), Arc::default())).unwrap();
        assert_eq!((s.events_appended, s.rejected), (1, 1));
    }
}
