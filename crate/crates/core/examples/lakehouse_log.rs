//! Versioned table log: optimistic commits from racing writers, snapshots,
//! time travel, audit.
//!
//! cargo run --example lakehouse_log

use std::sync::Arc;

use brc_lake::clock::SystemClock;
use brc_lake::etl::{trades_schema, SCHEMA_ID};
use brc_lake::lakehouse::{Action, AddFile, PartitionKey, Table};
use brc_lake::objectstore::{FsStore, ObjectKey};

fn add(path: &str, day: i64) -> Action {
    let t = 1_700_000_000_000_000 + day * 86_400_000_000;
    Action::AddFile(AddFile {
        path: ObjectKey::new(path).unwrap(),
        partition: PartitionKey::for_event("BTC-USD", t),
        rows: 10,
        bytes: 100,
        min_event_time_us: t,
        max_event_time_us: t + 1,
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let table = Table::new(Arc::new(FsStore::new(dir.path())?), "trades", Arc::new(SystemClock))?;
    println!("init -> v{}", table.init(SCHEMA_ID, &trades_schema(), "admin")?.version);

    std::thread::scope(|s| {
        for w in 0..4 {
            let table = table.clone();
            s.spawn(move || {
                for i in 0..3 {
                    let e = table
                        .commit(vec![add(&format!("tables/trades/data/w{w}-{i}.brcl"), i)], &format!("writer-{w}"), 50)
                        .unwrap();
                    println!("writer-{w} committed v{}", e.version);
                }
            });
        }
    });

    let e = table.commit(
        vec![
            Action::RemoveFile { path: ObjectKey::new("tables/trades/data/w0-0.brcl")? },
            Action::RemoveFile { path: ObjectKey::new("tables/trades/data/w1-0.brcl")? },
            add("tables/trades/data/merged.brcl", 0),
        ],
        "compactor",
        5,
    )?;
    println!("compaction-style commit -> v{}", e.version);

    let dup = table.commit(vec![add("tables/trades/data/merged.brcl", 0)], "late-writer", 5);
    println!("re-adding a live path: {}", dup.unwrap_err().kind());

    for v in [1, 7, e.version] {
        let snap = table.snapshot_at(Some(v))?;
        println!("v{v:>2}: {:>2} live files, {:>3} rows", snap.live_files.len(), snap.total_rows());
    }
    println!("v99: {}", table.snapshot_at(Some(99)).unwrap_err().kind());

    let audit = table.audit()?;
    println!("audit: {} live, {} dangling (the demo never wrote data bytes)", audit.live_files, audit.dangling.len());
    Ok(())
}
