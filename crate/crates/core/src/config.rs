//! Application config: JSON file, then env overrides (env wins).
//!
//! ```json
//! {"data_root": "/var/brc", "store": "fs", "dags_dir": "dags",
//!  "tables": [{"table_id": "trades", "schema_id": "trades_v1"}],
//!  "connectors": [ ... ], "s3": {"endpoint": "...", "bucket": "..."}}
//! ```
//!
//! Only `data_root` is required. Relative paths resolve against the config
//! file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::etl::SCHEMA_ID;
use crate::ingest::ConnectorConfig;
use crate::objectstore::{FsStore, ObjectStore, S3Config, S3Store, StoreError};

pub type Env = BTreeMap<String, String>;

pub const ENV_CONFIG: &str = "BRC_CONFIG";
pub const ENV_DATA_ROOT: &str = "BRC_DATA_ROOT";
pub const ENV_STORE: &str = "BRC_STORE";
pub const ENV_S3_ENDPOINT: &str = "BRC_S3_ENDPOINT";
pub const ENV_S3_REGION: &str = "BRC_S3_REGION";
pub const ENV_S3_ACCESS_KEY: &str = "BRC_S3_ACCESS_KEY";
pub const ENV_S3_SECRET_KEY: &str = "BRC_S3_SECRET_KEY";
pub const ENV_S3_BUCKET: &str = "BRC_S3_BUCKET";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Fs,
    S3,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableConfig {
    pub table_id: String,
    pub schema_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AppConfig {
    pub data_root: PathBuf,
    pub store: StoreKind,
    pub s3: Option<S3Config>,
    pub dags_dir: PathBuf,
    pub tables: Vec<TableConfig>,
    pub connectors: Vec<ConnectorConfig>,
    /// Staging segment roll size.
    pub max_segment_records: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawS3 {
    endpoint: Option<String>,
    region: Option<String>,
    access_key: Option<String>,
    secret_key: Option<String>,
    bucket: Option<String>,
    path_style: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    data_root: Option<PathBuf>,
    store: Option<StoreKind>,
    s3: Option<RawS3>,
    dags_dir: Option<PathBuf>,
    tables: Option<Vec<TableConfig>>,
    #[serde(default)]
    connectors: Vec<ConnectorConfig>,
    max_segment_records: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field {0:?}: {1}")]
    Invalid(String, String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Invalid(..) => "ConfigInvalid",
            ConfigError::Store(e) => e.kind(),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(field.to_string(), reason.into())
}

pub const DEFAULT_MAX_SEGMENT_RECORDS: u64 = 100_000;

/// Reads `path` (or `$BRC_CONFIG`) if given, then applies env overrides.
pub fn load_config(path: Option<&Path>, env: &Env) -> Result<AppConfig, ConfigError> {
    let path = path.map(Path::to_path_buf).or_else(|| env.get(ENV_CONFIG).map(PathBuf::from));
    let (raw, base) = match &path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| invalid("config", format!("{}: {e}", p.display())))?;
            let raw: RawConfig =
                serde_json::from_str(&text).map_err(|e| invalid("config", format!("{}: {e}", p.display())))?;
            (raw, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (RawConfig::default(), PathBuf::new()),
    };
    resolve(raw, &base, env)
}

/// Parses config text directly; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path, env: &Env) -> Result<AppConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| invalid("config", e.to_string()))?;
    resolve(raw, base, env)
}

fn resolve(raw: RawConfig, base: &Path, env: &Env) -> Result<AppConfig, ConfigError> {
    let abs = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
    let data_root = match env.get(ENV_DATA_ROOT) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => raw
            .data_root
            .map(abs)
            .ok_or_else(|| invalid("data_root", format!("required (config file or {ENV_DATA_ROOT})")))?,
    };
    let store = match env.get(ENV_STORE).map(String::as_str) {
        Some("fs") => StoreKind::Fs,
        Some("s3") => StoreKind::S3,
        Some(other) => return Err(invalid("store", format!("{other:?} is neither fs nor s3"))),
        None => raw.store.unwrap_or(StoreKind::Fs),
    };
    let rs3 = raw.s3.unwrap_or_default();
    let pick = |key: &str, from_file: Option<String>| -> Option<String> {
        env.get(key).cloned().or(from_file).filter(|v| !v.is_empty())
    };
    let s3_fields = [
        ("s3.endpoint", ENV_S3_ENDPOINT, pick(ENV_S3_ENDPOINT, rs3.endpoint)),
        ("s3.region", ENV_S3_REGION, pick(ENV_S3_REGION, rs3.region)),
        ("s3.access_key", ENV_S3_ACCESS_KEY, pick(ENV_S3_ACCESS_KEY, rs3.access_key)),
        ("s3.secret_key", ENV_S3_SECRET_KEY, pick(ENV_S3_SECRET_KEY, rs3.secret_key)),
        ("s3.bucket", ENV_S3_BUCKET, pick(ENV_S3_BUCKET, rs3.bucket)),
    ];
    let s3 = if store == StoreKind::S3 {
        let mut vals = Vec::new();
        for (field, key, v) in s3_fields {
            vals.push(v.ok_or_else(|| invalid(field, format!("required when store=s3 (or set {key})")))?);
        }
        let [endpoint, region, access_key, secret_key, bucket]: [String; 5] = vals.try_into().expect("five fields");
        Some(S3Config {
            endpoint,
            region,
            access_key,
            secret_key,
            bucket,
            path_style: rs3.path_style.unwrap_or(true),
        })
    } else {
        None
    };
    let tables = raw.tables.unwrap_or_else(|| {
        vec![TableConfig {
            table_id: "trades".into(),
            schema_id: SCHEMA_ID.into(),
        }]
    });
    for t in &tables {
        if !crate::objectstore::is_valid_segment(&t.table_id) {
            return Err(invalid("tables", format!("table_id {:?} is not a valid key segment", t.table_id)));
        }
        if t.schema_id != SCHEMA_ID {
            return Err(invalid("tables", format!("unknown schema_id {:?}", t.schema_id)));
        }
    }
    let mut connectors = raw.connectors;
    for c in &mut connectors {
        c.validate().map_err(|e| invalid("connectors", e.to_string()))?;
        if let Some(p) = c.replay_path.take() {
            c.replay_path = Some(abs(PathBuf::from(p)).to_string_lossy().into_owned());
        }
    }
    let max_segment_records = raw.max_segment_records.unwrap_or(DEFAULT_MAX_SEGMENT_RECORDS);
    if max_segment_records == 0 {
        return Err(invalid("max_segment_records", "must be >= 1"));
    }
    Ok(AppConfig {
        dags_dir: raw.dags_dir.map(abs).unwrap_or_else(|| data_root.join("dags")),
        data_root,
        store,
        s3,
        tables,
        connectors,
        max_segment_records,
    })
}

impl AppConfig {
    /// Minimal filesystem-backed config rooted at `data_root`.
    pub fn local(data_root: impl Into<PathBuf>) -> Self {
        let data_root = data_root.into();
        AppConfig {
            dags_dir: data_root.join("dags"),
            data_root,
            store: StoreKind::Fs,
            s3: None,
            tables: vec![TableConfig {
                table_id: "trades".into(),
                schema_id: SCHEMA_ID.into(),
            }],
            connectors: Vec::new(),
            max_segment_records: DEFAULT_MAX_SEGMENT_RECORDS,
        }
    }

    pub fn staging_dir(&self) -> PathBuf {
        self.data_root.join("staging")
    }

    /// Object store root for the fs backend.
    pub fn lake_dir(&self) -> PathBuf {
        self.data_root.join("lake")
    }

    /// Run logs, connector positions, scheduler lock.
    pub fn state_dir(&self) -> PathBuf {
        self.data_root.join("state")
    }

    pub fn connector(&self, id: &str) -> Option<&ConnectorConfig> {
        self.connectors.iter().find(|c| c.connector_id == id)
    }

    /// Creates the data root if needed and checks it is writable.
    pub fn ensure_data_root(&self) -> Result<(), ConfigError> {
        let err = |e: std::io::Error| invalid("data_root", format!("{}: {e}", self.data_root.display()));
        std::fs::create_dir_all(&self.data_root).map_err(err)?;
        let probe = self.data_root.join(format!(".probe-{}", std::process::id()));
        std::fs::write(&probe, b"").map_err(err)?;
        std::fs::remove_file(&probe).map_err(err)?;
        Ok(())
    }

    pub fn open_store(&self) -> Result<Arc<dyn ObjectStore>, ConfigError> {
        Ok(match (self.store, &self.s3) {
            (StoreKind::S3, Some(cfg)) => Arc::new(S3Store::connect(cfg)?),
            (StoreKind::S3, None) => return Err(invalid("s3", "missing")),
            (StoreKind::Fs, _) => Arc::new(FsStore::new(self.lake_dir())?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Env {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn minimal_is_fs() {
        let c = parse_config(r#"{"data_root": "/tmp/x"}"#, Path::new("/etc"), &Env::new()).unwrap();
        assert_eq!(c.store, StoreKind::Fs);
        assert_eq!(c.dags_dir, Path::new("/tmp/x/dags"));
        assert_eq!(c.tables[0].table_id, "trades");
        assert_eq!(c.max_segment_records, DEFAULT_MAX_SEGMENT_RECORDS);
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let c = parse_config(r#"{"data_root": "data", "dags_dir": "d"}"#, Path::new("/etc/brc"), &Env::new()).unwrap();
        assert_eq!(c.data_root, Path::new("/etc/brc/data"));
        assert_eq!(c.dags_dir, Path::new("/etc/brc/d"));
        let c = parse_config(
            r#"{"data_root": "/x", "connectors": [{"connector_id": "r", "kind": "replay", "source": "binance",
                "symbols": [], "replay_path": "../ticks.jsonl"}]}"#,
            Path::new("/etc/brc"),
            &Env::new(),
        )
        .unwrap();
        assert_eq!(c.connectors[0].replay_path.as_deref(), Some("/etc/brc/../ticks.jsonl"));
    }

    #[test]
    fn env_wins() {
        let c = parse_config(r#"{"data_root": "/a"}"#, Path::new("/"), &env(&[(ENV_DATA_ROOT, "/b")])).unwrap();
        assert_eq!(c.data_root, Path::new("/b"));
        let c = parse_config("{}", Path::new("/"), &env(&[(ENV_DATA_ROOT, "/c")])).unwrap();
        assert_eq!(c.data_root, Path::new("/c"));
    }

    #[test]
    fn s3_requires_every_field() {
        let text = r#"{"data_root": "/a", "store": "s3",
            "s3": {"endpoint": "http://127.0.0.1:9000", "region": "us-east-1", "access_key": "AK", "bucket": "b"}}"#;
        let err = parse_config(text, Path::new("/"), &Env::new()).unwrap_err();
        assert_eq!(err.kind(), "ConfigInvalid");
        assert!(err.to_string().contains("secret_key"), "{err}");
        let c = parse_config(text, Path::new("/"), &env(&[(ENV_S3_SECRET_KEY, "SK")])).unwrap();
        assert_eq!(c.s3.unwrap().secret_key, "SK");
        let c = parse_config(r#"{"data_root": "/a"}"#, Path::new("/"), &env(&[(ENV_STORE, "s3")]));
        assert!(c.is_err());
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_config("{}", Path::new("/"), &Env::new()).is_err());
        assert!(parse_config(r#"{"data_root": "/a", "bogus": 1}"#, Path::new("/"), &Env::new()).is_err());
        assert!(parse_config(r#"{"data_root": "/a", "tables": [{"table_id": "t", "schema_id": "v2"}]}"#, Path::new("/"), &Env::new()).is_err());
        assert!(load_config(Some(Path::new("/nonexistent/brc.json")), &Env::new()).is_err());
    }

    #[test]
    fn data_root_is_created() {
        let dir = tempfile::tempdir().unwrap();
        let c = AppConfig::local(dir.path().join("nested/root"));
        c.ensure_data_root().unwrap();
        assert!(c.data_root.is_dir());
        assert!(c.open_store().is_ok());
    }
}
