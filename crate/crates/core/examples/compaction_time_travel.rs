//! Many small exports leave many files per partition; compaction rewrites
//! them as one without changing the rows, and older versions stay readable.
//!
//! cargo run --example compaction_time_travel

use std::sync::Arc;

use brc_lake::clock::SystemClock;
use brc_lake::etl::{trades_schema, Etl, SCHEMA_ID};
use brc_lake::ingest::{generate_synthetic, normalize, ConnectorConfig, SequenceCounter};
use brc_lake::lakehouse::Table;
use brc_lake::objectstore::FsStore;
use brc_lake::query::{scan, ScanRequest};
use brc_lake::staging::StagingStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut cfg = ConnectorConfig::synthetic("c1", "synth", &[("btcusd", "BTC-USD")]);
    cfg.seed = 8;
    cfg.count = 3_000;
    let mut seq = SequenceCounter::default();
    let mut events = Vec::new();
    for raw in generate_synthetic(&cfg) {
        let mut e = normalize(&raw, &cfg, raw.event_time_us)?;
        seq.assign(&mut e);
        events.push(e);
    }
    let staging = StagingStore::new(dir.path().join("staging"));
    staging.open_session("c1")?.append_batch(&events)?;
    let table = Table::new(Arc::new(FsStore::new(dir.path().join("lake"))?), "trades", Arc::new(SystemClock))?;
    table.init(SCHEMA_ID, &trades_schema(), "admin")?;
    let etl = Etl::new(table.clone(), staging);
    etl.export_until_caught_up("c1", 250)?;

    let before = table.snapshot_at(None)?;
    println!("after export: v{} with {} files", before.version, before.live_files.len());
    for (part, v) in etl.compact_all(2)? {
        println!("compacted {part} -> v{v:?}");
    }
    let after = table.snapshot_at(None)?;
    println!("after compaction: v{} with {} files", after.version, after.live_files.len());

    let req = |v: Option<u64>| {
        let mut r = ScanRequest::new(i64::MIN / 2, i64::MAX / 2, ["BTC-USD".to_string()]);
        r.version = v;
        r
    };
    let old = scan(&table, &req(Some(before.version)))?;
    let new = scan(&table, &req(None))?;
    println!(
        "v{} reads {} rows from {} files; v{} reads {} rows from {} file(s); identical: {}",
        old.version,
        old.events.len(),
        old.planned.len(),
        new.version,
        new.events.len(),
        new.planned.len(),
        old.events == new.events
    );
    let audit = table.audit()?;
    println!("removed files kept for time travel: {}", audit.removed.len());
    Ok(())
}
