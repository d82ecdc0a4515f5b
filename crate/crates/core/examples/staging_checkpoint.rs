//! Staging: dense offsets, two-phase export checkpoint, pruning.
//!
//! cargo run --example staging_checkpoint

use brc_lake::ingest::{MarketEvent, Side, StreamKind};
use brc_lake::staging::StagingStore;

fn tick(i: u64) -> MarketEvent {
    MarketEvent {
        source: "demo".into(),
        stream: StreamKind::Trade,
        symbol: "BTC-USD".into(),
        event_time_us: 1_700_000_000_000_000 + i as i64 * 1_000,
        ingest_time_us: 1_700_000_000_000_000 + i as i64 * 1_000 + 5,
        sequence: i,
        event_id: i.to_string(),
        price_e8: 3_000_000_000_000 + i as i64,
        qty_e8: 10_000_000,
        side: if i.is_multiple_of(2) { Side::Buy } else { Side::Sell },
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let staging = StagingStore::new(dir.path()).with_max_segment_records(100);
    {
        let mut session = staging.open_session("c1")?;
        let events: Vec<MarketEvent> = (0..350).map(tick).collect();
        for chunk in events.chunks(50) {
            let r = session.append_batch(chunk)?.unwrap();
            print!("[{}..={}] ", r.first_offset, r.last_offset);
        }
        println!();
    }

    let batch = staging.drain_batch("c1", 120)?;
    println!("drained {} records, next checkpoint {}", batch.records.len(), batch.next_checkpoint);
    println!("checkpoint before commit: {}", staging.checkpoint("c1")?.committed_offset);
    // A crash here would redeliver the same 120 records on the next drain.
    let again = staging.drain_batch("c1", 120)?;
    assert_eq!(again.records.first().map(|r| r.offset), Some(0));
    staging.commit_checkpoint("c1", batch.next_checkpoint)?;
    println!("checkpoint after commit: {}", staging.checkpoint("c1")?.committed_offset);

    println!("pruned {} sealed segments", staging.prune("c1")?);
    for seg in staging.segments("c1")? {
        println!("  segment @{}: {} records", seg.start_offset, seg.record_count);
    }
    match staging.read_from("c1", 0, 10) {
        Err(e) => println!("reading pruned offsets: {} ({e})", e.kind()),
        Ok(r) => println!("unexpectedly read {} records", r.len()),
    }
    Ok(())
}
