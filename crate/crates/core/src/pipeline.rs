//! Wiring shared by the CLI, the scheduler actions, and the harness: one
//! config, one object store, one staging root, and the registered actions
//! `ingest.run`, `etl.export` and `etl.compact`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::Deserialize;
use thiserror::Error;

use crate::clock::Clock;
use crate::config::{AppConfig, ConfigError};
use crate::etl::{trades_schema, Etl, EtlError, SCHEMA_ID};
use crate::fault::{FaultInjector, InjectedCrash};
use crate::ingest::{run_connector, ConnectorRuntime, IngestError, IngestStamp, SessionSummary};
use crate::lakeformat::FormatError;
use crate::lakehouse::{LakeError, PartitionKey, Table};
use crate::objectstore::{ObjectStore, StoreError};
use crate::orchestrator::{ActionError, ActionRegistry, SchedError, TaskContext};
use crate::query::QueryError;
use crate::staging::{StagingError, StagingStore};

/// Any operational error, with a stable machine-readable kind.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Staging(#[from] StagingError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Lake(#[from] LakeError),
    #[error(transparent)]
    Etl(#[from] EtlError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("{0}")]
    Other(&'static str, String),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(e) => e.kind(),
            Error::Ingest(e) => e.kind(),
            Error::Staging(e) => e.kind(),
            Error::Store(e) => e.kind(),
            Error::Format(e) => e.kind(),
            Error::Lake(e) => e.kind(),
            Error::Etl(e) => e.kind(),
            Error::Sched(e) => e.kind(),
            Error::Query(e) => e.kind(),
            Error::Other(kind, _) => kind,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Other("Io", e.to_string())
    }
}

pub const DEFAULT_EXPORT_MAX_RECORDS: usize = 100_000;
pub const DEFAULT_MIN_FILES: usize = 2;

#[derive(Clone)]
pub struct Pipeline {
    pub config: AppConfig,
    pub store: Arc<dyn ObjectStore>,
    pub staging: StagingStore,
    pub clock: Arc<dyn Clock>,
    pub faults: Arc<FaultInjector>,
    pub stamp: IngestStamp,
    pub ingest_batch_size: usize,
    /// Handles share one snapshot cache per table.
    tables: Arc<Mutex<BTreeMap<String, Table>>>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").field("data_root", &self.config.data_root).finish()
    }
}

impl Pipeline {
    /// Prepares the data root and opens the configured store.
    pub fn open(config: AppConfig, clock: Arc<dyn Clock>) -> Result<Self, Error> {
        config.ensure_data_root()?;
        let store = config.open_store()?;
        Ok(Self::with_store(config, store, clock))
    }

    pub fn with_store(config: AppConfig, store: Arc<dyn ObjectStore>, clock: Arc<dyn Clock>) -> Self {
        let staging = StagingStore::new(config.staging_dir()).with_max_segment_records(config.max_segment_records);
        Pipeline {
            config,
            store,
            staging,
            clock,
            faults: Arc::new(FaultInjector::disabled()),
            stamp: IngestStamp::Clock,
            ingest_batch_size: 1000,
            tables: Arc::default(),
        }
    }

    pub fn with_faults(mut self, faults: Arc<FaultInjector>) -> Self {
        self.staging = self.staging.with_faults(faults.clone());
        self.faults = faults;
        self
    }

    pub fn table(&self, table_id: &str) -> Result<Table, Error> {
        if !self.config.tables.iter().any(|t| t.table_id == table_id) {
            return Err(Error::Config(ConfigError::Invalid(
                "tables".into(),
                format!("table {table_id:?} is not configured"),
            )));
        }
        let mut tables = self.tables.lock().unwrap();
        if let Some(t) = tables.get(table_id) {
            return Ok(t.clone());
        }
        let t = Table::new(self.store.clone(), table_id, self.clock.clone())?;
        tables.insert(table_id.to_string(), t.clone());
        Ok(t)
    }

    /// Initializes the table unless it already exists. Returns its current version.
    pub fn ensure_table(&self, table_id: &str) -> Result<u64, Error> {
        let t = self.table(table_id)?;
        match t.init(SCHEMA_ID, &trades_schema(), "brc") {
            Ok(e) => Ok(e.version),
            Err(LakeError::AlreadyInitialized(_)) => Ok(t.current_version()?),
            Err(e) => Err(e.into()),
        }
    }

    pub fn etl(&self, table_id: &str, committer: &str) -> Result<Etl, Error> {
        Ok(Etl::new(self.table(table_id)?, self.staging.clone())
            .with_faults(self.faults.clone())
            .with_committer(committer))
    }

    pub fn connector_runtime(&self) -> ConnectorRuntime {
        let mut rt = ConnectorRuntime::new(self.staging.clone(), self.config.state_dir().join("ingest"), self.clock.clone());
        rt.faults = self.faults.clone();
        rt.stamp = self.stamp;
        rt.batch_size = self.ingest_batch_size;
        rt
    }

    pub fn run_connector(&self, connector_id: &str, until_event_time_us: Option<i64>) -> Result<SessionSummary, Error> {
        let cfg = self
            .config
            .connector(connector_id)
            .ok_or_else(|| ConfigError::Invalid("connectors".into(), format!("no connector {connector_id:?}")))?;
        let mut rt = self.connector_runtime();
        rt.until_event_time_us = until_event_time_us;
        Ok(run_connector(cfg, &rt)?)
    }

    /// The action registry the scheduler executes DAG tasks with.
    pub fn registry(&self) -> ActionRegistry {
        let mut reg = ActionRegistry::new();
        let p = self.clone();
        reg.register("ingest.run", move |ctx: &TaskContext<'_>| {
            let a: IngestParams = params(ctx)?;
            let horizon = a.live.then_some(ctx.logical_time_us);
            p.run_connector(&a.connector_id, horizon).map(drop).map_err(action_err)
        });
        let p = self.clone();
        reg.register("etl.export", move |ctx: &TaskContext<'_>| {
            let a: ExportParams = params(ctx)?;
            let etl = p.etl(&a.table_id, &format!("export-{}", a.connector_id)).map_err(action_err)?;
            etl.export_until_caught_up(&a.connector_id, a.max_records)
                .map(drop)
                .map_err(|e| action_err(e.into()))
        });
        let p = self.clone();
        reg.register("etl.compact", move |ctx: &TaskContext<'_>| {
            let a: CompactParams = params(ctx)?;
            let etl = p.etl(&a.table_id, "compactor").map_err(action_err)?;
            let r = match a.partition.as_deref() {
                None | Some("all") => etl.compact_all(a.min_files).map(drop),
                Some(s) => {
                    let part = PartitionKey::parse(s)
                        .ok_or_else(|| ActionError::Failed(format!("bad partition {s:?}")))?;
                    etl.compact(&part, a.min_files).map(drop)
                }
            };
            r.map_err(|e| action_err(e.into()))
        });
        reg
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestParams {
    connector_id: String,
    /// Only hand over events up to the run's logical time.
    #[serde(default)]
    live: bool,
}

fn default_table() -> String {
    "trades".into()
}
fn default_max_records() -> usize {
    DEFAULT_EXPORT_MAX_RECORDS
}
fn default_min_files() -> usize {
    DEFAULT_MIN_FILES
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportParams {
    connector_id: String,
    #[serde(default = "default_table")]
    table_id: String,
    #[serde(default = "default_max_records")]
    max_records: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompactParams {
    #[serde(default = "default_table")]
    table_id: String,
    #[serde(default)]
    partition: Option<String>,
    #[serde(default = "default_min_files")]
    min_files: usize,
}

fn params<T: for<'de> Deserialize<'de>>(ctx: &TaskContext<'_>) -> Result<T, ActionError> {
    let v = match ctx.params {
        serde_json::Value::Null => serde_json::json!({}),
        v => v.clone(),
    };
    serde_json::from_value(v).map_err(|e| ActionError::Failed(format!("params: {e}")))
}

/// The injected crash behind `e`, if any.
pub fn crash_of(e: &Error) -> Option<&InjectedCrash> {
    match e {
        Error::Ingest(IngestError::Crash(c)) | Error::Staging(StagingError::Crash(c)) | Error::Sched(SchedError::Crash(c)) => Some(c),
        Error::Etl(e) => e.as_crash(),
        _ => None,
    }
}

fn action_err(e: Error) -> ActionError {
    match crash_of(&e) {
        Some(c) => ActionError::Crash(c.clone()),
        None => ActionError::Failed(format!("{}: {e}", e.kind())),
    }
}
