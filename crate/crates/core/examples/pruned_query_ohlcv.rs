//! A month of ticks for three symbols; a two-day, one-symbol query touches
//! only its partitions. Results become 1-hour OHLCV bars and CSV.
//!
//! cargo run --example pruned_query_ohlcv

use std::sync::Arc;

use brc_lake::clock::SystemClock;
use brc_lake::etl::{trades_schema, Etl, SCHEMA_ID};
use brc_lake::ingest::{MarketEvent, Side, SplitMix64, StreamKind};
use brc_lake::lakehouse::Table;
use brc_lake::objectstore::{CountingStore, FsStore};
use brc_lake::query::{export_bars, export_events, ohlcv_by_symbol, parse_width, scan, ExportFormat, ScanRequest};
use brc_lake::staging::StagingStore;
use brc_lake::time::{parse_iso_us, US_PER_DAY};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let start = parse_iso_us("2024-03-01T00:00:00Z").unwrap();
    let mut rng = SplitMix64::new(99);
    let mut events = Vec::new();
    for (s, symbol) in ["BTC-USD", "ETH-USD", "SOL-USD"].iter().enumerate() {
        let mut price = [6_000_000_000_000i64, 350_000_000_000, 14_000_000_000][s];
        let mut t = start;
        let mut i = 0u64;
        while t < start + 30 * US_PER_DAY {
            price += (rng.next_u64() % 2_000_001) as i64 - 1_000_000;
            events.push(MarketEvent {
                source: "synth".into(),
                stream: StreamKind::Trade,
                symbol: symbol.to_string(),
                event_time_us: t,
                ingest_time_us: t,
                sequence: i,
                event_id: format!("{symbol}-{i}"),
                price_e8: price,
                qty_e8: 1 + (rng.next_u64() % 100_000_000) as i64,
                side: if rng.next_u64().is_multiple_of(2) { Side::Buy } else { Side::Sell },
            });
            t += 60_000_000 + (rng.next_u64() % 120_000_000) as i64;
            i += 1;
        }
    }
    events.sort_by_key(|e| e.event_time_us);

    let store = Arc::new(CountingStore::new(FsStore::new(dir.path().join("lake"))?));
    let table = Table::new(store.clone(), "trades", Arc::new(SystemClock))?;
    table.init(SCHEMA_ID, &trades_schema(), "admin")?;
    let staging = StagingStore::new(dir.path().join("staging"));
    staging.open_session("c1")?.append_batch(&events)?;
    Etl::new(table.clone(), staging).export_until_caught_up("c1", 10_000)?;
    let snap = table.snapshot_at(None)?;
    println!("{} events in {} files", events.len(), snap.live_files.len());

    store.reset();
    let t0 = parse_iso_us("2024-03-10T00:00:00Z").unwrap();
    let result = scan(&table, &ScanRequest::new(t0, t0 + 2 * US_PER_DAY, ["ETH-USD".to_string()]))?;
    let stats = store.stats();
    let data_reads: Vec<_> = stats.keys_read().into_iter().filter(|k| k.contains("/data/")).collect();
    println!("ETH-USD 2024-03-10..12: {} rows, planned {} files, opened {}:", result.events.len(), result.planned.len(), data_reads.len());
    for k in &data_reads {
        println!("  {k}");
    }

    let bars = ohlcv_by_symbol(&result.events, parse_width("1h").unwrap())?;
    let mut csv = Vec::new();
    export_bars(&bars, ExportFormat::Csv, &mut csv)?;
    println!("first bars:");
    for line in String::from_utf8(csv)?.lines().take(4) {
        println!("  {line}");
    }
    let mut rows = Vec::new();
    export_events(&result.events[..2], ExportFormat::Jsonl, &mut rows)?;
    print!("first rows as JSONL:\n{}", String::from_utf8(rows)?);
    Ok(())
}
