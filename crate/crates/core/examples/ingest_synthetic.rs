//! Seeded synthetic feed through a connector session into staging, with a
//! crash in the middle of an append and a restart that redelivers.
//!
//! cargo run --example ingest_synthetic

use std::sync::Arc;

use brc_lake::clock::SimClock;
use brc_lake::fault::{CrashPoint, FaultInjector, AFTER_APPEND_BEFORE_POSITION};
use brc_lake::ingest::{run_connector, ConnectorConfig, ConnectorRuntime, IngestStamp, SYNTHETIC_EPOCH_US};
use brc_lake::staging::StagingStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut config = ConnectorConfig::synthetic("synth-1", "synth", &[("btcusd", "BTC-USD"), ("ethusd", "ETH-USD")]);
    config.seed = 42;
    config.count = 5_000;
    config.dup_prob_bp = 200;

    let staging = StagingStore::new(dir.path().join("staging")).with_max_segment_records(2_000);
    let faults = Arc::new(FaultInjector::new([CrashPoint {
        site: AFTER_APPEND_BEFORE_POSITION.into(),
        scope: Some("synth-1".into()),
        hit: 3,
    }]));
    let mut rt = ConnectorRuntime::new(staging.clone(), dir.path().join("state"), Arc::new(SimClock::new(SYNTHETIC_EPOCH_US)));
    rt.stamp = IngestStamp::EventTimePlus(250_000);
    rt.faults = faults.clone();

    match run_connector(&config, &rt) {
        Err(e) => println!("session 1 died: {e} (next offset {})", staging.next_offset("synth-1")?),
        Ok(s) => println!("session 1 finished unexpectedly: {s:?}"),
    }
    let s = run_connector(&config, &rt)?;
    println!(
        "session 2 resumed at raw event {} and appended {} events",
        s.resumed_from, s.events_appended
    );

    let records = staging.read_from("synth-1", 0, usize::MAX)?;
    let distinct = records.iter().map(|r| r.event.identity()).collect::<std::collections::HashSet<_>>().len();
    println!("staged {} records, {distinct} distinct identities", records.len());
    for seg in staging.segments("synth-1")? {
        println!("  segment @{:>5}: {:>5} records sealed={}", seg.start_offset, seg.record_count, seg.sealed);
    }
    println!("first record: {}", serde_json::to_string(&records[0].event)?);
    Ok(())
}
