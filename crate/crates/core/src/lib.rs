//! A desk-scale lakehouse for high-frequency market events.
//!
//! Data flows through five stages, each in its own module:
//!
//! ```text
//! ingest ──► staging ──► etl ──► lakehouse (log) + objectstore (.brcl files) ──► query
//!                          ▲
//!                   orchestrator (DAG runs, retries, backfill)
//! ```
//!
//! * [`ingest`] produces raw events (synthetic generator or JSONL replay), normalizes
//!   them into [`ingest::MarketEvent`]s and appends them to staging at least once.
//! * [`staging`] is a segmented, offset-addressed append-only buffer with a
//!   two-phase export checkpoint.
//! * [`lakeformat`] is the `BRCL` columnar file format.
//! * [`objectstore`] abstracts a local filesystem and an S3-compatible endpoint
//!   (SigV4 signed); conditional put is the only synchronization primitive.
//! * [`lakehouse`] is the versioned transaction log with optimistic commits.
//! * [`etl`] drains staging, deduplicates, partitions and publishes files; it
//!   also compacts partitions.
//! * [`query`] plans pruned scans, aggregates OHLCV bars and renders CSV/JSONL.
//! * [`orchestrator`] runs DAGs under a (possibly simulated) clock.
//! * [`harness`] wires everything into reproducible crash-injection scenarios.
//!
//! The `examples/` directory has one runnable program per capability.

pub mod cli;
pub mod clock;
pub mod config;
pub mod etl;
pub mod fault;
pub mod fsutil;
pub mod harness;
pub mod ingest;
pub mod lakeformat;
pub mod lakehouse;
pub mod objectstore;
pub mod orchestrator;
pub mod pipeline;
pub mod query;
pub mod staging;
pub mod time;
