//! Deterministic end-to-end scenarios: synthetic connectors, the scheduler on
//! a simulated clock, export, compaction and a final full scan, with named
//! crash sites and restarts that rebuild every component from disk. The scan
//! is compared byte for byte with a brute-force oracle computed straight from
//! the generator.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::SimClock;
use crate::config::AppConfig;
use crate::etl::{trades_schema, SCHEMA_ID};
use crate::fault::{self, CrashPoint, FaultInjector};
use crate::ingest::{
    cmp_events, generate_synthetic, normalize, ConnectorConfig, ConnectorKind, IngestStamp, MarketEvent,
    SequenceCounter, SYNTHETIC_EPOCH_US,
};
use crate::lakehouse::{Action, AddFile, LakeError, PartitionKey, Table};
use crate::objectstore::{FsStore, ObjectStore};
use crate::orchestrator::{
    next_run_after, ActionBinding, DagSpec, RetryPolicy, SchedError, Scheduler, SchedulerOptions, Schedule, TaskSpec,
};
use crate::pipeline::{Error, Pipeline};
use crate::query::{export_events, scan, ExportFormat, ScanRequest};

/// A crash site by name, or a fully specified point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CrashSpec {
    Site(String),
    Point(CrashPoint),
}

impl CrashSpec {
    pub fn point(&self) -> CrashPoint {
        match self {
            CrashSpec::Site(s) => CrashPoint {
                site: s.clone(),
                scope: None,
                hit: 1,
            },
            CrashSpec::Point(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagOverrides {
    #[serde(default = "default_period")]
    pub period_us: i64,
    #[serde(default = "default_parallel")]
    pub max_parallel_tasks: usize,
    #[serde(default = "default_export_max")]
    pub export_max_records: usize,
    #[serde(default = "default_min_files")]
    pub compact_min_files: usize,
}

fn default_period() -> i64 {
    3_600_000_000
}
fn default_parallel() -> usize {
    1
}
fn default_export_max() -> usize {
    20_000
}
fn default_min_files() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_latency() -> i64 {
    250_000
}
fn default_batch() -> usize {
    1000
}
fn default_segment() -> u64 {
    10_000
}
fn default_name() -> String {
    "scenario".into()
}

impl Default for DagOverrides {
    fn default() -> Self {
        DagOverrides {
            period_us: default_period(),
            max_parallel_tasks: default_parallel(),
            export_max_records: default_export_max(),
            compact_min_files: default_min_files(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    /// Exact table row count.
    #[serde(default)]
    pub rows: Option<u64>,
    /// Skip the byte comparison against the oracle.
    #[serde(default)]
    pub skip_oracle: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    /// Connector `i` generates with seed `seed + i`.
    pub seed: u64,
    pub connectors: Vec<ConnectorConfig>,
    #[serde(default)]
    pub dag: DagOverrides,
    #[serde(default)]
    pub crash_points: Vec<CrashSpec>,
    #[serde(default)]
    pub expected: Expected,
    /// `ingest_time_us = event_time_us + ingest_latency_us`.
    #[serde(default = "default_latency")]
    pub ingest_latency_us: i64,
    #[serde(default = "default_batch")]
    pub ingest_batch_size: usize,
    #[serde(default = "default_segment")]
    pub max_segment_records: u64,
    /// Prune exported staging segments at the end.
    #[serde(default = "default_true")]
    pub prune_staging: bool,
}

impl Scenario {
    /// `connectors` × `symbols` synthetic feeds of `count` events each.
    pub fn synthetic(name: &str, seed: u64, connectors: usize, symbols: &[&str], count: u64, dup_prob_bp: u32) -> Self {
        let mapping: Vec<(String, String)> = symbols.iter().map(|s| (s.replace('-', "").to_lowercase(), s.to_string())).collect();
        let mapping: Vec<(&str, &str)> = mapping.iter().map(|(r, n)| (r.as_str(), n.as_str())).collect();
        Scenario {
            name: name.into(),
            seed,
            connectors: (0..connectors)
                .map(|i| {
                    let mut c = ConnectorConfig::synthetic(&format!("c{}", i + 1), "synth", &mapping);
                    c.count = count;
                    c.dup_prob_bp = dup_prob_bp;
                    c
                })
                .collect(),
            dag: DagOverrides::default(),
            crash_points: Vec::new(),
            expected: Expected::default(),
            ingest_latency_us: default_latency(),
            ingest_batch_size: default_batch(),
            max_segment_records: default_segment(),
            prune_staging: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| HarnessError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidScenario(m));
        if self.connectors.is_empty() {
            return bad("at least one connector is required".into());
        }
        let mut ids = HashSet::new();
        for c in &self.connectors {
            if c.kind != ConnectorKind::Synthetic {
                return bad(format!("connector {:?}: only synthetic connectors are supported", c.connector_id));
            }
            c.validate().map_err(|e| HarnessError::InvalidScenario(e.to_string()))?;
            if !ids.insert(&c.connector_id) {
                return bad(format!("connector {:?} listed twice", c.connector_id));
            }
        }
        for p in &self.crash_points {
            if !fault::ALL_SITES.contains(&p.point().site.as_str()) {
                return bad(format!("unknown crash site {:?}", p.point().site));
            }
        }
        if self.dag.period_us <= 0 || self.dag.max_parallel_tasks == 0 || self.dag.export_max_records == 0 {
            return bad("dag overrides must be positive".into());
        }
        if self.ingest_latency_us < 0 {
            return bad("ingest_latency_us must be >= 0".into());
        }
        Ok(())
    }

    /// Connector configs with their derived seeds.
    pub fn seeded_connectors(&self) -> Vec<ConnectorConfig> {
        self.connectors
            .iter()
            .enumerate()
            .map(|(i, c)| ConnectorConfig {
                seed: self.seed.wrapping_add(i as u64),
                ..c.clone()
            })
            .collect()
    }

    pub fn symbols(&self) -> BTreeSet<String> {
        self.connectors.iter().flat_map(|c| c.symbols.iter().map(|m| m.normalized.clone())).collect()
    }

    /// One DAG: ingest then export per connector, then compaction.
    pub fn dag_spec(&self) -> DagSpec {
        let action = |name: &str, params: serde_json::Value| ActionBinding {
            name: name.into(),
            params,
        };
        let mut tasks = Vec::new();
        for c in &self.connectors {
            let id = &c.connector_id;
            tasks.push(TaskSpec {
                task_id: format!("ingest-{id}"),
                depends_on: vec![],
                action: action("ingest.run", serde_json::json!({"connector_id": id, "live": true})),
                retry: RetryPolicy::default(),
            });
            tasks.push(TaskSpec {
                task_id: format!("export-{id}"),
                depends_on: vec![format!("ingest-{id}")],
                action: action(
                    "etl.export",
                    serde_json::json!({"connector_id": id, "max_records": self.dag.export_max_records}),
                ),
                retry: RetryPolicy::default(),
            });
        }
        tasks.push(TaskSpec {
            task_id: "compact".into(),
            depends_on: self.connectors.iter().map(|c| format!("export-{}", c.connector_id)).collect(),
            action: action(
                "etl.compact",
                serde_json::json!({"partition": "all", "min_files": self.dag.compact_min_files}),
            ),
            retry: RetryPolicy::default(),
        });
        DagSpec {
            dag_id: "e2e".into(),
            schedule: Schedule::Interval {
                anchor_us: SYNTHETIC_EPOCH_US,
                period_us: self.dag.period_us,
            },
            tasks,
            max_parallel_tasks: self.dag.max_parallel_tasks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub events_generated: u64,
    pub distinct_identities: u64,
    pub runs: u64,
    pub restarts: u64,
    pub crashes_fired: Vec<String>,
    pub table_version: u64,
    pub live_files: u64,
    pub row_count: u64,
    pub rows_by_partition: BTreeMap<String, u64>,
    pub output_sha256: String,
    pub oracle_sha256: String,
    pub assertions: Vec<AssertionResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    /// `Err(AssertionFailed)` naming every failed assertion.
    pub fn check(&self) -> Result<(), HarnessError> {
        let failed: Vec<String> = self
            .assertions
            .iter()
            .filter(|a| !a.passed)
            .map(|a| format!("{}: {}", a.name, a.detail))
            .collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::AssertionFailed(failed.join("; ")))
        }
    }

    /// The parts of the report that describe logical table content.
    pub fn table_state(&self) -> (u64, &BTreeMap<String, u64>, &str) {
        (self.row_count, &self.rows_by_partition, &self.output_sha256)
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("data root {0} is not empty")]
    DirtyRoot(String),
    #[error("{restarts} restarts exceed the {points} armed crash points")]
    TooManyRestarts { restarts: u64, points: usize },
    #[error("assertion failed: {0}")]
    AssertionFailed(String),
    #[error(transparent)]
    Pipeline(#[from] Error),
}

impl HarnessError {
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::InvalidScenario(_) => "InvalidScenario",
            HarnessError::DirtyRoot(_) => "DirtyRoot",
            HarnessError::TooManyRestarts { .. } => "TooManyRestarts",
            HarnessError::AssertionFailed(_) => "AssertionFailed",
            HarnessError::Pipeline(e) => e.kind(),
        }
    }
}

macro_rules! from_via_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Pipeline(e.into())
            }
        }
    )*};
}
from_via_pipeline!(
    SchedError,
    LakeError,
    crate::query::QueryError,
    crate::staging::StagingError,
    crate::objectstore::StoreError,
    std::io::Error
);

/// Every normalized event the scenario's connectors will ever deliver, in
/// generation order, with the sequences the connectors assign.
pub fn generated_events(scenario: &Scenario) -> Vec<MarketEvent> {
    let mut out = Vec::new();
    for c in scenario.seeded_connectors() {
        let mut seq = SequenceCounter::default();
        for r in generate_synthetic(&c) {
            if let Ok(mut e) = normalize(&r, &c, r.event_time_us + scenario.ingest_latency_us) {
                seq.assign(&mut e);
                out.push(e);
            }
        }
    }
    out
}

/// Dedup by identity (first wins), keep `[t0, t1)` × `symbols`, sort.
pub fn oracle_rows(events: &[MarketEvent], t0: i64, t1: i64, symbols: &BTreeSet<String>) -> Vec<MarketEvent> {
    let mut seen = HashSet::new();
    let mut out: Vec<MarketEvent> = events
        .iter()
        .filter(|e| seen.insert(e.identity()))
        .filter(|e| e.event_time_us >= t0 && e.event_time_us < t1 && symbols.contains(&e.symbol))
        .cloned()
        .collect();
    out.sort_by(cmp_events);
    out
}

pub fn render_csv(events: &[MarketEvent]) -> Vec<u8> {
    let mut out = Vec::new();
    export_events(events, ExportFormat::Csv, &mut out).expect("in-memory sink");
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn check(name: &str, passed: bool, detail: impl Into<String>) -> AssertionResult {
    AssertionResult {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

pub const TABLE_ID: &str = "trades";

/// The output of a finished scenario: its report plus the full-scan CSV.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub csv: Vec<u8>,
    pub oracle_csv: Vec<u8>,
}

/// Runs `scenario` in the empty directory `root`.
pub fn run_scenario(scenario: &Scenario, root: &Path) -> Result<Outcome, HarnessError> {
    scenario.validate()?;
    if root.exists() && std::fs::read_dir(root)?.next().is_some() {
        return Err(HarnessError::DirtyRoot(root.display().to_string()));
    }

    let events = generated_events(scenario);
    let (Some(t_min), Some(t_max)) = (
        events.iter().map(|e| e.event_time_us).min(),
        events.iter().map(|e| e.event_time_us).max(),
    ) else {
        return Err(HarnessError::InvalidScenario("connectors generate no events".into()));
    };
    let symbols = scenario.symbols();
    let (t0, t1) = (t_min, t_max + 1);

    let mut config = AppConfig::local(root);
    config.connectors = scenario.seeded_connectors();
    config.max_segment_records = scenario.max_segment_records;
    config.ensure_data_root().map_err(Error::from)?;

    let dag = scenario.dag_spec();
    let last_instant = next_run_after(&dag.schedule, t_max - 1);
    let clock = Arc::new(SimClock::new(SYNTHETIC_EPOCH_US));
    let points: Vec<CrashPoint> = scenario.crash_points.iter().map(CrashSpec::point).collect();
    let faults = Arc::new(FaultInjector::new(points.clone()));

    let mut restarts = 0u64;
    loop {
        // A fresh "process": everything but the simulated clock and the
        // fault schedule is rebuilt from disk.
        let store: Arc<dyn ObjectStore> = Arc::new(FsStore::new(config.lake_dir())?);
        let mut p = Pipeline::with_store(config.clone(), store, clock.clone()).with_faults(faults.clone());
        p.stamp = IngestStamp::EventTimePlus(scenario.ingest_latency_us);
        p.ingest_batch_size = scenario.ingest_batch_size;
        p.ensure_table(TABLE_ID)?;
        let sched = Scheduler::new(vec![dag.clone()], p.registry(), clock.clone(), &config.state_dir())?;
        let opts = SchedulerOptions {
            max_runs: None,
            until_us: Some(last_instant + 1),
        };
        match sched.run(&opts) {
            Ok(_) => break,
            Err(SchedError::Crash(_)) => {
                restarts += 1;
                if restarts > points.len() as u64 {
                    return Err(HarnessError::TooManyRestarts {
                        restarts,
                        points: points.len(),
                    });
                }
            }
            Err(e) => return Err(e.into()),
        }
    }

    let store: Arc<dyn ObjectStore> = Arc::new(FsStore::new(config.lake_dir())?);
    let p = Pipeline::with_store(config.clone(), store, clock.clone());
    if scenario.prune_staging {
        for c in &config.connectors {
            p.staging.prune(&c.connector_id)?;
        }
    }
    let table = p.table(TABLE_ID)?;
    let result = scan(&table, &ScanRequest::new(t0, t1, symbols.iter().cloned()))?;
    let csv = render_csv(&result.events);
    let oracle = oracle_rows(&events, t0, t1, &symbols);
    let oracle_csv = render_csv(&oracle);

    let snap = table.snapshot_at(None)?;
    let mut rows_by_partition = BTreeMap::new();
    for f in snap.live_files.values() {
        *rows_by_partition.entry(f.partition.render()).or_insert(0) += f.rows;
    }
    let distinct = events.iter().map(MarketEvent::identity).collect::<HashSet<_>>().len() as u64;
    let audit = table.audit()?;
    let runs = std::fs::read_dir(config.state_dir().join("runs").join(&dag.dag_id))?.count() as u64;

    let mut assertions = Vec::new();
    if !scenario.expected.skip_oracle {
        assertions.push(check(
            "oracle_equal",
            csv == oracle_csv,
            format!("{} output rows vs {} oracle rows", result.events.len(), oracle.len()),
        ));
    }
    assertions.push(check(
        "rows_equal_distinct_identities",
        snap.total_rows() == distinct,
        format!("{} rows, {distinct} distinct identities", snap.total_rows()),
    ));
    if let Some(n) = scenario.expected.rows {
        assertions.push(check("expected_rows", snap.total_rows() == n, format!("{} rows, expected {n}", snap.total_rows())));
    }
    assertions.push(check(
        "no_dangling_files",
        audit.dangling.is_empty(),
        format!("{} live files missing from the store", audit.dangling.len()),
    ));
    let mut lag = Vec::new();
    for c in &config.connectors {
        let (cp, next) = (p.staging.checkpoint(&c.connector_id)?.committed_offset, p.staging.next_offset(&c.connector_id)?);
        if cp != next {
            lag.push(format!("{}: checkpoint {cp} of {next}", c.connector_id));
        }
    }
    let lag_detail = if lag.is_empty() { "every checkpoint at the staging tail".to_string() } else { lag.join(", ") };
    assertions.push(check("staging_fully_exported", lag.is_empty(), lag_detail));
    assertions.push(check(
        "all_crash_points_fired",
        faults.pending() == 0,
        format!("{} of {} crash points never fired", faults.pending(), points.len()),
    ));

    let mut crashes_fired: Vec<String> = faults.fired().into_iter().map(|c| c.site).collect();
    crashes_fired.sort();
    let report = Report {
        scenario: scenario.name.clone(),
        events_generated: events.len() as u64,
        distinct_identities: distinct,
        runs,
        restarts,
        crashes_fired,
        table_version: snap.version,
        live_files: snap.live_files.len() as u64,
        row_count: snap.total_rows(),
        rows_by_partition,
        output_sha256: sha256_hex(&csv),
        oracle_sha256: sha256_hex(&oracle_csv),
        assertions,
    };
    Ok(Outcome {
        report,
        csv,
        oracle_csv,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StressReport {
    pub writer: String,
    pub commits: u64,
    /// Versions this writer committed, in order.
    pub versions: Vec<u64>,
}

/// One writer of the commit-concurrency test: `commits` single-file commits
/// against `table_id` in an fs store at `lake_root`. Each commit adds a real
/// one-row data file named after the writer and commit index.
pub fn commit_stress(lake_root: &Path, table_id: &str, writer: &str, commits: u64) -> Result<StressReport, HarnessError> {
    let store: Arc<dyn ObjectStore> = Arc::new(FsStore::new(lake_root)?);
    let table = Table::new(store.clone(), table_id, Arc::new(crate::clock::SystemClock))?;
    match table.init(SCHEMA_ID, &trades_schema(), writer) {
        Ok(_) | Err(LakeError::AlreadyInitialized(_)) => {}
        Err(e) => return Err(e.into()),
    }
    let mut versions = Vec::with_capacity(commits as usize);
    for i in 0..commits {
        let t = SYNTHETIC_EPOCH_US + i as i64;
        let event = MarketEvent {
            source: "stress".into(),
            stream: crate::ingest::StreamKind::Trade,
            symbol: "BTC-USD".into(),
            event_time_us: t,
            ingest_time_us: t,
            sequence: i,
            event_id: format!("{writer}-{i}"),
            price_e8: 1,
            qty_e8: 1,
            side: crate::ingest::Side::Buy,
        };
        let bytes = crate::lakeformat::write_columns(
            &trades_schema(),
            &crate::etl::events_to_columns(std::slice::from_ref(&event)),
            crate::etl::DEFAULT_WRITER,
        )
        .map_err(Error::Format)?;
        let partition = PartitionKey::for_event("BTC-USD", t);
        let path = crate::objectstore::ObjectKey::new(format!(
            "tables/{table_id}/data/{}/part-{writer}-{i:05}.brcl",
            partition.render()
        ))?;
        store.put(&path, &bytes, true)?;
        let add = AddFile {
            path,
            partition,
            rows: 1,
            bytes: bytes.len() as u64,
            min_event_time_us: t,
            max_event_time_us: t,
        };
        versions.push(table.commit(vec![Action::AddFile(add)], writer, 10_000)?.version);
    }
    Ok(StressReport {
        writer: writer.into(),
        commits,
        versions,
    })
}
