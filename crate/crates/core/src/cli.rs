//! `brc`: one binary, one subcommand per operation.
//!
//! Exit codes: 0 success, 1 operational error (one JSON line on stderr with
//! a stable `error` kind), 2 usage error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::clock::{Clock, SystemClock};
use crate::config::{load_config, Env};
use crate::harness::{commit_stress, run_scenario, HarnessError, Scenario};
use crate::lakehouse::PartitionKey;
use crate::orchestrator::{load_dags, Scheduler, SchedulerOptions};
use crate::pipeline::{Error, Pipeline, DEFAULT_EXPORT_MAX_RECORDS};
use crate::query::{export_bars, export_events, ohlcv_by_symbol, parse_width, scan, ExportFormat, ScanRequest};
use crate::time::parse_iso_us;

const AFTER_HELP: &str = "\
Configuration: --config <file> or BRC_CONFIG names a JSON file; only data_root is required.
Environment overrides (env wins over the file):
  BRC_DATA_ROOT      data root (staging/, lake/, state/; dags/ unless dags_dir is set)
  BRC_STORE          fs (default) or s3
  BRC_S3_ENDPOINT, BRC_S3_REGION, BRC_S3_ACCESS_KEY, BRC_S3_SECRET_KEY, BRC_S3_BUCKET
Defaults: store=fs, tables=[trades/trades_v1], max_segment_records=100000.";

#[derive(Debug, Parser)]
#[command(name = "brc", version, about = "Crypto market data lakehouse", after_help = AFTER_HELP)]
pub struct Cli {
    /// JSON config file (default: $BRC_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Market data connectors.
    #[command(subcommand)]
    Ingest(IngestCmd),
    /// Staging store maintenance.
    #[command(subcommand)]
    Staging(StagingCmd),
    /// Staging to lakehouse export and compaction.
    #[command(subcommand)]
    Etl(EtlCmd),
    /// DAG scheduler.
    Sched(SchedArgs),
    /// Time-range scan with optional time travel and OHLCV bars.
    Query(QueryArgs),
    /// Table administration.
    #[command(subcommand)]
    Lake(LakeCmd),
    /// End-to-end scenarios.
    #[command(subcommand)]
    Harness(HarnessCmd),
}

#[derive(Debug, Subcommand)]
pub enum IngestCmd {
    /// Run one connector session to the end of its source.
    Run {
        #[arg(long)]
        connector: String,
        /// Only deliver events at or before this instant (ISO 8601).
        #[arg(long)]
        until: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum StagingCmd {
    /// Delete sealed segments wholly below the export checkpoint.
    Prune {
        #[arg(long, required_unless_present = "all", conflicts_with = "all")]
        connector: Option<String>,
        #[arg(long)]
        all: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum EtlCmd {
    /// Export staged records of one connector.
    Export {
        #[arg(long)]
        connector: String,
        #[arg(long, default_value = "trades")]
        table: String,
        #[arg(long, default_value_t = DEFAULT_EXPORT_MAX_RECORDS)]
        max_records: usize,
        /// Keep exporting batches until staging is drained.
        #[arg(long)]
        until_caught_up: bool,
    },
    /// Rewrite a partition's files as one.
    Compact {
        #[arg(long, default_value = "trades")]
        table: String,
        /// e.g. symbol=BTC-USD/date=2021-03-04
        #[arg(long, required_unless_present = "all", conflicts_with = "all")]
        partition: Option<String>,
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 2)]
        min_files: usize,
    },
}

#[derive(Debug, Args)]
pub struct SchedArgs {
    /// Directory of DAG JSON files (default: dags_dir from the config).
    #[arg(long, global = true)]
    pub dags: Option<PathBuf>,
    #[command(subcommand)]
    pub command: SchedCmd,
}

#[derive(Debug, Subcommand)]
pub enum SchedCmd {
    /// Resume interrupted runs, then follow every DAG's schedule.
    Start {
        #[arg(long)]
        max_runs: Option<usize>,
        /// Stop before the first instant at or after this time (ISO 8601).
        #[arg(long)]
        until: Option<String>,
    },
    /// Execute (or resume) one run of a DAG.
    RunOnce {
        #[arg(long)]
        dag: String,
        /// Logical time (ISO 8601).
        #[arg(long)]
        at: String,
    },
    /// Run every schedule instant in [from, to).
    Backfill {
        #[arg(long)]
        dag: String,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long, default_value = "trades")]
    pub table: String,
    /// Comma-separated, e.g. BTC-USD,ETH-USD
    #[arg(long, value_delimiter = ',', required = true)]
    pub symbols: Vec<String>,
    /// Inclusive start (ISO 8601).
    #[arg(long)]
    pub from: String,
    /// Exclusive end (ISO 8601).
    #[arg(long)]
    pub to: String,
    /// Read the table as of this version.
    #[arg(long)]
    pub version: Option<u64>,
    /// Bar width, e.g. 30s, 1m, 1h, 1d.
    #[arg(long)]
    pub ohlcv: Option<String>,
    #[arg(long, default_value = "csv", value_parser = ["csv", "jsonl"])]
    pub format: String,
    /// Output path, or - for stdout.
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Subcommand)]
pub enum LakeCmd {
    /// Create the table (version 1).
    Init {
        #[arg(long, default_value = "trades")]
        table: String,
    },
    /// Print the commit log, one JSON entry per line.
    Log {
        #[arg(long, default_value = "trades")]
        table: String,
    },
    /// Compare the live file set with the store.
    Audit {
        #[arg(long, default_value = "trades")]
        table: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum HarnessCmd {
    /// Run a scenario file and print its report.
    Run {
        scenario: PathBuf,
        /// Empty directory to run in (default: a fresh temp directory, removed afterwards).
        #[arg(long)]
        root: Option<PathBuf>,
        /// Also write the full-scan CSV here.
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// One writer of the commit-concurrency test.
    #[command(hide = true)]
    CommitStress {
        #[arg(long)]
        lake_root: PathBuf,
        #[arg(long)]
        table: String,
        #[arg(long)]
        writer: String,
        #[arg(long)]
        commits: u64,
    },
}

type Out<'a> = &'a mut dyn Write;

fn usage(msg: String) -> Error {
    Error::Other("InvalidArgument", msg)
}

fn instant(flag: &str, s: &str) -> Result<i64, Error> {
    parse_iso_us(s).ok_or_else(|| usage(format!("--{flag}: {s:?} is not an ISO 8601 instant")))
}

fn print_json(out: Out<'_>, v: &impl Serialize) -> Result<(), Error> {
    let mut line = serde_json::to_vec(v).map_err(|e| Error::Other("Io", e.to_string()))?;
    line.push(b'\n');
    out.write_all(&line)?;
    Ok(())
}

fn open_pipeline(cli_config: Option<&Path>, env: &Env) -> Result<Pipeline, Error> {
    let cfg = load_config(cli_config, env)?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    Pipeline::open(cfg, clock)
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code.
pub fn dispatch<I, S>(argv: I, env: &Env, stdout: Out<'_>, stderr: Out<'_>) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match run(cli, env, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let line = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            let _ = writeln!(stderr, "{line}");
            1
        }
    }
}

fn run(cli: Cli, env: &Env, stdout: Out<'_>) -> Result<(), Error> {
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::Ingest(IngestCmd::Run { connector, until }) => {
            let p = open_pipeline(cfg_path, env)?;
            let until = until.map(|u| instant("until", &u)).transpose()?;
            print_json(stdout, &p.run_connector(&connector, until)?)
        }
        Command::Staging(StagingCmd::Prune { connector, all }) => {
            let p = open_pipeline(cfg_path, env)?;
            let ids = if all { p.staging.connectors()? } else { connector.into_iter().collect() };
            let mut removed = std::collections::BTreeMap::new();
            for id in ids {
                let n = p.staging.prune(&id)?;
                removed.insert(id, n);
            }
            print_json(stdout, &serde_json::json!({ "segments_removed": removed }))
        }
        Command::Etl(EtlCmd::Export {
            connector,
            table,
            max_records,
            until_caught_up,
        }) => {
            let p = open_pipeline(cfg_path, env)?;
            let etl = p.etl(&table, &format!("export-{connector}"))?;
            if until_caught_up {
                for o in etl.export_until_caught_up(&connector, max_records)? {
                    print_json(stdout, &o)?;
                }
                Ok(())
            } else {
                print_json(stdout, &etl.export_job(&connector, max_records)?)
            }
        }
        Command::Etl(EtlCmd::Compact {
            table,
            partition,
            all,
            min_files,
        }) => {
            let p = open_pipeline(cfg_path, env)?;
            let etl = p.etl(&table, "compactor")?;
            let results = if all {
                etl.compact_all(min_files)?
            } else {
                let s = partition.expect("clap enforces --partition or --all");
                let part = PartitionKey::parse(&s).ok_or_else(|| usage(format!("--partition: bad partition {s:?}")))?;
                let v = etl.compact(&part, min_files)?;
                vec![(part, v)]
            };
            for (part, version) in results {
                print_json(stdout, &serde_json::json!({"partition": part.render(), "version": version}))?;
            }
            Ok(())
        }
        Command::Sched(SchedArgs { dags, command: cmd }) => {
            let p = open_pipeline(cfg_path, env)?;
            for t in &p.config.tables {
                p.ensure_table(&t.table_id)?;
            }
            let dags = load_dags(dags.as_deref().unwrap_or(&p.config.dags_dir))?;
            let sched = Scheduler::new(dags, p.registry(), p.clock.clone(), &p.config.state_dir())?;
            let results = match cmd {
                SchedCmd::Start { max_runs, until } => sched.run(&SchedulerOptions {
                    max_runs,
                    until_us: until.map(|u| instant("until", &u)).transpose()?,
                })?,
                SchedCmd::RunOnce { dag, at } => vec![sched.run_once(&dag, instant("at", &at)?)?],
                SchedCmd::Backfill { dag, from, to } => sched.backfill(&dag, instant("from", &from)?, instant("to", &to)?)?,
            };
            for r in &results {
                print_json(stdout, r)?;
            }
            Ok(())
        }
        Command::Query(q) => query(cfg_path, env, q, stdout),
        Command::Lake(cmd) => {
            let p = open_pipeline(cfg_path, env)?;
            match cmd {
                LakeCmd::Init { table } => {
                    let e = p.table(&table)?.init(crate::etl::SCHEMA_ID, &crate::etl::trades_schema(), "brc")?;
                    print_json(stdout, &serde_json::json!({"table": table, "version": e.version}))
                }
                LakeCmd::Log { table } => {
                    for e in p.table(&table)?.history()? {
                        print_json(stdout, &e)?;
                    }
                    Ok(())
                }
                LakeCmd::Audit { table } => print_json(stdout, &p.table(&table)?.audit()?),
            }
        }
        Command::Harness(HarnessCmd::Run { scenario, root, csv_out }) => {
            let text = std::fs::read_to_string(&scenario)?;
            let s = Scenario::from_json(&text).map_err(harness_err)?;
            let (root, scratch) = match root {
                Some(r) => (r, false),
                None => {
                    let nanos = std::time::SystemTime::now()
                        .duration_since(std::time::UNIX_EPOCH)
                        .map_or(0, |d| d.as_nanos());
                    (std::env::temp_dir().join(format!("brc-harness-{}-{nanos}", std::process::id())), true)
                }
            };
            let outcome = run_scenario(&s, &root);
            if scratch {
                let _ = std::fs::remove_dir_all(&root);
            }
            let outcome = outcome.map_err(harness_err)?;
            if let Some(path) = csv_out {
                std::fs::write(path, &outcome.csv)?;
            }
            print_json(stdout, &outcome.report)?;
            outcome.report.check().map_err(harness_err)
        }
        Command::Harness(HarnessCmd::CommitStress {
            lake_root,
            table,
            writer,
            commits,
        }) => print_json(stdout, &commit_stress(&lake_root, &table, &writer, commits).map_err(harness_err)?),
    }
}

fn harness_err(e: HarnessError) -> Error {
    match e {
        HarnessError::Pipeline(e) => e,
        other => Error::Other(other.kind(), other.to_string()),
    }
}

fn query(cfg_path: Option<&Path>, env: &Env, q: QueryArgs, stdout: Out<'_>) -> Result<(), Error> {
    let format: ExportFormat = q.format.parse().map_err(usage)?;
    let mut req = ScanRequest::new(instant("from", &q.from)?, instant("to", &q.to)?, q.symbols);
    req.version = q.version;
    let width = q
        .ohlcv
        .as_deref()
        .map(|w| parse_width(w).ok_or_else(|| usage(format!("--ohlcv: bad width {w:?}"))))
        .transpose()?;
    let p = open_pipeline(cfg_path, env)?;
    let table = p.table(&q.table)?;
    let result = scan(&table, &req)?;
    let mut file;
    let sink: &mut dyn Write = if q.out == "-" {
        stdout
    } else {
        file = BufWriter::new(File::create(&q.out)?);
        &mut file
    };
    match width {
        Some(w) => export_bars(&ohlcv_by_symbol(&result.events, w)?, format, sink)?,
        None => export_events(&result.events, format, sink)?,
    };
    sink.flush()?;
    Ok(())
}

/// Entry point for the binary: real argv, env, and stdio.
pub fn main_with_process_env() -> i32 {
    let env: Env = std::env::vars().collect();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    dispatch(std::env::args_os(), &env, &mut stdout.lock(), &mut stderr.lock())
}
