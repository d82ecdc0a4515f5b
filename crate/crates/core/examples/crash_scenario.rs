//! A seeded end-to-end scenario: connectors, staging, exports and compaction
//! driven by the scheduler, with a crash at every fault site. The table must
//! match the crash-free run and the brute-force oracle exactly.
//!
//! cargo run --release --example crash_scenario [events_per_connector]

use brc_lake::fault::ALL_SITES;
use brc_lake::harness::{run_scenario, CrashSpec, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let count: u64 = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(6_000);
    let dir = tempfile::tempdir()?;
    let mut base = Scenario::synthetic("demo", 7, 2, &["BTC-USD", "ETH-USD", "SOL-USD"], count, 100);
    base.dag.period_us = 600_000_000;
    base.dag.export_max_records = 2_000;
    base.max_segment_records = 1_000;

    let clean = run_scenario(&base, &dir.path().join("clean"))?;
    let mut crashy = base.clone();
    crashy.crash_points = ALL_SITES.iter().map(|s| CrashSpec::Site(s.to_string())).collect();
    let crashed = run_scenario(&crashy, &dir.path().join("crashed"))?;

    for (label, out) in [("clean", &clean), ("crashed", &crashed)] {
        let r = &out.report;
        println!(
            "{label:<8} runs {:>3} restarts {} version {:>3} files {:>3} rows {} sha256 {}",
            r.runs,
            r.restarts,
            r.table_version,
            r.live_files,
            r.row_count,
            &r.output_sha256[..16]
        );
        for a in &r.assertions {
            println!("         {} {}: {}", if a.passed { "ok  " } else { "FAIL" }, a.name, a.detail);
        }
    }
    println!("crash sites fired: {}", crashed.report.crashes_fired.join(", "));
    println!("table state identical: {}", clean.report.table_state() == crashed.report.table_state());
    Ok(())
}
