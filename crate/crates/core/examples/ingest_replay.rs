//! Replay a captured JSON Lines file, rate limited by a token bucket.
//!
//! cargo run --example ingest_replay

use std::sync::Arc;

use brc_lake::clock::{Clock, SimClock};
use brc_lake::ingest::{
    replay_file, run_connector, take_token, ConnectorConfig, ConnectorKind, ConnectorRuntime, Decision, RateLimit,
    TokenBucket,
};
use brc_lake::staging::StagingStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/replay_sample.jsonl");
    let raw = replay_file(fixture)?;
    println!("{} raw lines, first at {} us", raw.len(), raw[0].event_time_us);

    // Five tokens per second with a burst of three, sampled every 100 ms.
    let mut bucket = TokenBucket::new(5, 3, 0);
    let mut pattern = String::new();
    for step in 0..20 {
        let d;
        (d, bucket) = take_token(bucket, step * 100_000);
        pattern.push(if d == Decision::Allow { '#' } else { '.' });
    }
    println!("token bucket 5/s burst 3, 100 ms steps: {pattern}");

    let dir = tempfile::tempdir()?;
    let mut config = ConnectorConfig::synthetic("replay-1", "binance", &[("BTCUSDT", "BTC-USDT")]);
    config.kind = ConnectorKind::Replay;
    config.replay_path = Some(fixture.into());
    config.rate_limit = RateLimit { rate_per_s: 20, burst: 5 };
    let clock = Arc::new(SimClock::new(0));
    let rt = ConnectorRuntime::new(StagingStore::new(dir.path().join("staging")), dir.path().join("state"), clock.clone());
    let s = run_connector(&config, &rt)?;
    println!(
        "appended {} events; rate limit held the session for {:.2} simulated seconds",
        s.events_appended,
        clock.now_us() as f64 / 1e6
    );
    Ok(())
}
