//! Read path: pruned, snapshot-pinned scans, OHLCV bars, and CSV/JSONL export.

mod export;
mod ohlcv;

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::etl::{columns_to_events, EtlError};
use crate::ingest::{cmp_events, MarketEvent};
use crate::lakeformat::FormatError;
use crate::lakehouse::{read_data_file, AddFile, LakeError, Table};
use crate::objectstore::StoreError;

pub use export::{export_bars, export_events, ExportFormat, BAR_COLUMNS};
pub use ohlcv::{ohlcv, ohlcv_by_symbol, parse_width, OhlcvBar};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanRequest {
    /// Half-open `[t0_us, t1_us)`.
    pub t0_us: i64,
    pub t1_us: i64,
    pub symbols: BTreeSet<String>,
    pub version: Option<u64>,
}

impl ScanRequest {
    pub fn new(t0_us: i64, t1_us: i64, symbols: impl IntoIterator<Item = impl Into<String>>) -> Self {
        ScanRequest {
            t0_us,
            t1_us,
            symbols: symbols.into_iter().map(Into::into).collect(),
            version: None,
        }
    }

    pub fn at_version(mut self, version: u64) -> Self {
        self.version = Some(version);
        self
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.t0_us >= self.t1_us {
            return Err(QueryError::InvalidRequest(format!(
                "empty time range [{}, {})",
                self.t0_us, self.t1_us
            )));
        }
        if self.symbols.is_empty() {
            return Err(QueryError::InvalidRequest("no symbols given".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    /// Snapshot the scan was pinned to.
    pub version: u64,
    /// Files the planner selected, in plan order.
    pub planned: Vec<AddFile>,
    pub events: Vec<MarketEvent>,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Lake(#[from] LakeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("data file: {0}")]
    Format(#[from] FormatError),
    #[error("corrupt table data: {0}")]
    Corrupt(String),
    #[error("event {0:?} is not a trade")]
    NonTradeEvent(String),
    #[error("OHLCV input mixes symbols {0:?} and {1:?}")]
    MixedSymbols(String, String),
    #[error("sink: {0}")]
    Sink(String),
}

impl QueryError {
    pub fn kind(&self) -> &'static str {
        match self {
            QueryError::InvalidRequest(_) => "InvalidRequest",
            QueryError::Lake(e) => e.kind(),
            QueryError::Store(e) => e.kind(),
            QueryError::Format(e) => e.kind(),
            QueryError::Corrupt(_) => "Corrupt",
            QueryError::NonTradeEvent(_) => "NonTradeEvent",
            QueryError::MixedSymbols(..) => "MixedSymbols",
            QueryError::Sink(_) => "SinkError",
        }
    }
}

impl From<EtlError> for QueryError {
    fn from(e: EtlError) -> Self {
        QueryError::Corrupt(e.to_string())
    }
}

/// Rows of one planned file that fall inside the request, in sort order.
fn read_filtered(table: &Table, file: &AddFile, req: &ScanRequest) -> Result<Vec<MarketEvent>, QueryError> {
    let store = table.store().as_ref();
    let inside = |t: i64| t >= req.t0_us && t < req.t1_us;
    // Files entirely inside the window skip the timestamp probe.
    if !(file.min_event_time_us >= req.t0_us && file.max_event_time_us < req.t1_us) {
        let probe = read_data_file(store, file, Some(&["event_time_us"]))?;
        let times = probe
            .column("event_time_us")
            .and_then(|c| c.as_i64())
            .ok_or_else(|| QueryError::Corrupt(format!("{}: no event_time_us column", file.path)))?;
        if !times.iter().any(|t| inside(*t)) {
            return Ok(Vec::new());
        }
    }
    let lf = read_data_file(store, file, None)?;
    let mut rows: Vec<MarketEvent> = columns_to_events(&lf)?
        .into_iter()
        .filter(|e| inside(e.event_time_us) && req.symbols.contains(&e.symbol))
        .collect();
    if !rows.is_sorted_by(|a, b| cmp_events(a, b).is_le()) {
        rows.sort_by(cmp_events);
    }
    Ok(rows)
}

struct Head {
    event: MarketEvent,
    run: usize,
}

impl PartialEq for Head {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Head {}
impl PartialOrd for Head {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Head {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        cmp_events(&self.event, &other.event).then(self.run.cmp(&other.run))
    }
}

/// Merges individually sorted runs into one sorted vector.
pub fn kway_merge(runs: Vec<Vec<MarketEvent>>) -> Vec<MarketEvent> {
    let total = runs.iter().map(Vec::len).sum();
    let mut iters: Vec<_> = runs.into_iter().map(Vec::into_iter).collect();
    let mut heap = BinaryHeap::with_capacity(iters.len());
    for (run, it) in iters.iter_mut().enumerate() {
        if let Some(event) = it.next() {
            heap.push(Reverse(Head { event, run }));
        }
    }
    let mut out = Vec::with_capacity(total);
    while let Some(Reverse(Head { event, run })) = heap.pop() {
        out.push(event);
        if let Some(next) = iters[run].next() {
            heap.push(Reverse(Head { event: next, run }));
        }
    }
    out
}

/// Plans against one pinned snapshot, reads only the planned files, and
/// returns the filtered rows in `(event_time_us, sequence, event_id)` order.
pub fn scan(table: &Table, req: &ScanRequest) -> Result<ScanResult, QueryError> {
    req.validate()?;
    let snap = table.snapshot_at(req.version)?;
    let symbols: Vec<String> = req.symbols.iter().cloned().collect();
    let planned = snap.list_files(req.t0_us, req.t1_us, &symbols);
    let runs = planned
        .iter()
        .map(|f| read_filtered(table, f, req))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScanResult {
        version: snap.version,
        planned,
        events: kway_merge(runs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::etl::{trades_schema, Etl, SCHEMA_ID};
    use crate::ingest::{Side, StreamKind};
    use crate::lakehouse::Snapshot;
    use crate::objectstore::{CountingStore, FsStore, ObjectStore};
    use crate::staging::StagingStore;
    use crate::time::US_PER_DAY;
    use proptest::prelude::*;
    use std::sync::Arc;

    const T0: i64 = 1_600_000_000_000_000 - 1_600_000_000_000_000 % US_PER_DAY;
    const SYMS: [&str; 3] = ["BTC-USD", "ETH-USD", "SOL-USD"];

    fn event(i: u64, sym: &str, t: i64) -> MarketEvent {
        MarketEvent {
            source: "test".into(),
            stream: StreamKind::Trade,
            symbol: sym.into(),
            event_time_us: t,
            ingest_time_us: t,
            sequence: i,
            event_id: format!("e{i}"),
            price_e8: 100_000_000 + i as i64,
            qty_e8: 1_000,
            side: Side::Sell,
        }
    }

    struct Env {
        _dir: tempfile::TempDir,
        counting: Arc<CountingStore<FsStore>>,
        etl: Etl,
    }

    fn env() -> Env {
        let dir = tempfile::tempdir().unwrap();
        let counting = Arc::new(CountingStore::new(FsStore::new(dir.path().join("lake")).unwrap()));
        let store: Arc<dyn ObjectStore> = counting.clone();
        let table = Table::new(store, "trades", Arc::new(SimClock::new(0))).unwrap();
        table.init(SCHEMA_ID, &trades_schema(), "test").unwrap();
        let etl = Etl::new(table, StagingStore::new(dir.path().join("staging")));
        Env {
            _dir: dir,
            counting,
            etl,
        }
    }

    /// Stages and exports each batch as its own commit.
    fn load(env: &Env, batches: &[Vec<MarketEvent>]) {
        let mut s = env.etl.staging.open_session("c").unwrap();
        for b in batches {
            s.append_batch(b).unwrap();
            env.etl.export_job("c", usize::MAX).unwrap();
        }
    }

    fn brute_force(table: &Table, snap: &Snapshot, req: &ScanRequest) -> Vec<MarketEvent> {
        let mut all = Vec::new();
        for f in snap.live_files.values() {
            let lf = read_data_file(table.store().as_ref(), f, None).unwrap();
            all.extend(columns_to_events(&lf).unwrap());
        }
        let mut out: Vec<MarketEvent> = all
            .into_iter()
            .filter(|e| e.event_time_us >= req.t0_us && e.event_time_us < req.t1_us && req.symbols.contains(&e.symbol))
            .collect();
        out.sort_by(cmp_events);
        out
    }

    #[test]
    fn empty_range_and_validation() {
        let e = env();
        load(&e, &[vec![event(1, "BTC-USD", T0 + 10)]]);
        let r = scan(&e.etl.table, &ScanRequest::new(T0 + 100, T0 + 200, ["BTC-USD"])).unwrap();
        assert!(r.events.is_empty());
        assert_eq!(r.version, 2);
        assert!(matches!(
            scan(&e.etl.table, &ScanRequest::new(5, 5, ["BTC-USD"])),
            Err(QueryError::InvalidRequest(_))
        ));
        let none: [&str; 0] = [];
        assert!(scan(&e.etl.table, &ScanRequest::new(0, 5, none)).is_err());
    }

    #[test]
    fn time_travel_excludes_later_commits() {
        let e = env();
        load(&e, &[vec![event(1, "BTC-USD", T0 + 10)], vec![event(2, "BTC-USD", T0 + 20)]]);
        let req = ScanRequest::new(T0, T0 + US_PER_DAY, ["BTC-USD"]);
        assert_eq!(scan(&e.etl.table, &req).unwrap().events.len(), 2);
        let old = scan(&e.etl.table, &req.clone().at_version(2)).unwrap();
        assert_eq!(old.events.iter().map(|e| e.sequence).collect::<Vec<_>>(), [1]);
        let err = scan(&e.etl.table, &req.at_version(9)).unwrap_err();
        assert_eq!(err.kind(), "NoSuchVersion");
    }

    #[test]
    fn uninitialized_table() {
        let dir = tempfile::tempdir().unwrap();
        let store: Arc<dyn ObjectStore> = Arc::new(FsStore::new(dir.path()).unwrap());
        let table = Table::new(store, "trades", Arc::new(SimClock::new(0))).unwrap();
        let err = scan(&table, &ScanRequest::new(0, 10, ["BTC-USD"])).unwrap_err();
        assert_eq!(err.kind(), "NotInitialized");
    }

    #[test]
    fn reads_only_planned_files() {
        let e = env();
        // 6 days × 3 symbols, one file each.
        let mut batch = Vec::new();
        let mut i = 0;
        for d in 0..6 {
            for s in SYMS {
                for k in 0..4 {
                    i += 1;
                    batch.push(event(i, s, T0 + d * US_PER_DAY + k * 3_600_000_000));
                }
            }
        }
        load(&e, &[batch]);
        e.counting.reset();
        let req = ScanRequest::new(T0 + 2 * US_PER_DAY, T0 + 4 * US_PER_DAY, ["ETH-USD"]);
        let r = scan(&e.etl.table, &req).unwrap();
        assert_eq!(r.planned.len(), 2);
        let read: BTreeSet<String> = e.counting.stats().reads.keys().cloned().collect();
        let want: BTreeSet<String> = r.planned.iter().map(|f| f.path.to_string()).collect();
        let data_reads: BTreeSet<String> = read.into_iter().filter(|k| k.contains("/data/")).collect();
        assert_eq!(data_reads, want);
        assert_eq!(r.events.len(), 8);
        let snap = e.etl.table.snapshot_at(None).unwrap();
        assert_eq!(r.events, brute_force(&e.etl.table, &snap, &req));
    }

    #[test]
    fn merge_is_stable_and_total() {
        let a = vec![event(1, "BTC-USD", 1), event(3, "BTC-USD", 3)];
        let b = vec![event(2, "BTC-USD", 2), event(4, "BTC-USD", 3)];
        let got: Vec<u64> = kway_merge(vec![a, vec![], b]).iter().map(|e| e.sequence).collect();
        assert_eq!(got, [1, 2, 3, 4]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scan_equals_brute_force(
            batches in prop::collection::vec(
                prop::collection::vec((0usize..3, 0i64..(3 * US_PER_DAY)), 1..40), 1..4),
            a in 0i64..(3 * US_PER_DAY),
            len in 1i64..(2 * US_PER_DAY),
            mask in 1u8..8,
        ) {
            let e = env();
            let mut i = 0u64;
            let batches: Vec<Vec<MarketEvent>> = batches.into_iter().map(|b| b.into_iter().map(|(s, t)| {
                i += 1;
                event(i, SYMS[s], T0 + t)
            }).collect()).collect();
            load(&e, &batches);
            let syms: Vec<&str> = (0..3).filter(|k| mask & (1 << k) != 0).map(|k| SYMS[k]).collect();
            let req = ScanRequest::new(T0 + a, T0 + a + len, syms);
            let r = scan(&e.etl.table, &req).unwrap();
            let snap = e.etl.table.snapshot_at(None).unwrap();
            prop_assert_eq!(&r.events, &brute_force(&e.etl.table, &snap, &req));
            // Every file the scan touched was planned.
            let planned: BTreeSet<String> = r.planned.iter().map(|f| f.path.to_string()).collect();
            e.counting.reset();
            scan(&e.etl.table, &req).unwrap();
            for k in e.counting.stats().reads.keys().filter(|k| k.contains("/data/")) {
                prop_assert!(planned.contains(k), "read unplanned {}", k);
            }
        }
    }
}
