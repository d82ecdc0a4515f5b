//! Staging to lakehouse export with a crash between the table commit and the
//! checkpoint: the retry redelivers the batch and dedup drops every row of it.
//!
//! cargo run --example exactly_once_export

use std::sync::Arc;

use brc_lake::clock::SystemClock;
use brc_lake::etl::{trades_schema, Etl, SCHEMA_ID};
use brc_lake::fault::{CrashPoint, FaultInjector, AFTER_LAKE_COMMIT_BEFORE_CHECKPOINT};
use brc_lake::ingest::{generate_synthetic, normalize, ConnectorConfig, SequenceCounter};
use brc_lake::lakehouse::Table;
use brc_lake::objectstore::FsStore;
use brc_lake::staging::StagingStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut cfg = ConnectorConfig::synthetic("c1", "synth", &[("btcusd", "BTC-USD"), ("ethusd", "ETH-USD")]);
    cfg.seed = 3;
    cfg.count = 4_000;
    cfg.dup_prob_bp = 1_500;
    let mut seq = SequenceCounter::default();
    let mut events = Vec::new();
    for raw in generate_synthetic(&cfg) {
        let mut e = normalize(&raw, &cfg, raw.event_time_us + 1_000)?;
        seq.assign(&mut e);
        events.push(e);
    }
    let staging = StagingStore::new(dir.path().join("staging"));
    staging.open_session("c1")?.append_batch(&events)?;
    println!("staged {} deliveries (15% upstream redelivery)", events.len());

    let table = Table::new(Arc::new(FsStore::new(dir.path().join("lake"))?), "trades", Arc::new(SystemClock))?;
    table.init(SCHEMA_ID, &trades_schema(), "admin")?;
    let faults = Arc::new(FaultInjector::new([CrashPoint {
        site: AFTER_LAKE_COMMIT_BEFORE_CHECKPOINT.into(),
        scope: None,
        hit: 2,
    }]));
    let crashing = Etl::new(table.clone(), staging.clone()).with_faults(faults);

    let first = crashing.export_job("c1", 1_500)?;
    println!("batch 1: drained {} published {} dropped {} -> v{:?}", first.records_drained, first.rows_published, first.dropped, first.version);
    match crashing.export_job("c1", 1_500) {
        Err(e) => println!("batch 2: {e}; checkpoint stays at {}", staging.checkpoint("c1")?.committed_offset),
        Ok(o) => println!("batch 2 unexpectedly survived: {o:?}"),
    }

    // A fresh exporter after the "restart".
    for o in Etl::new(table.clone(), staging.clone()).export_until_caught_up("c1", 1_500)? {
        println!("retry: drained {} published {} dropped {} -> v{:?}", o.records_drained, o.rows_published, o.dropped, o.version);
    }
    let distinct = events.iter().map(|e| e.identity()).collect::<std::collections::HashSet<_>>().len();
    let rows = table.snapshot_at(None)?.total_rows();
    println!("table rows {rows}, distinct upstream events {distinct}");
    assert_eq!(rows as usize, distinct);
    Ok(())
}
