use std::collections::BTreeMap;
use std::io::Write;

use serde_json::Value;

use super::{OhlcvBar, QueryError};
use crate::etl::COLUMNS;
use crate::ingest::{render_e8, MarketEvent};
use crate::time::render_iso_us;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(format!("unknown format {other:?} (expected csv or jsonl)")),
        }
    }
}

pub const BAR_COLUMNS: [&str; 8] = [
    "symbol",
    "bucket_start_us",
    "open_e8",
    "high_e8",
    "low_e8",
    "close_e8",
    "volume_e8",
    "trade_count",
];

fn event_row(e: &MarketEvent) -> [String; 10] {
    [
        render_iso_us(e.event_time_us),
        render_iso_us(e.ingest_time_us),
        e.source.clone(),
        e.stream.as_str().to_string(),
        e.symbol.clone(),
        e.sequence.to_string(),
        e.event_id.clone(),
        render_e8(e.price_e8),
        render_e8(e.qty_e8),
        e.side.as_str().to_string(),
    ]
}

fn bar_row(symbol: &str, b: &OhlcvBar) -> [String; 8] {
    [
        symbol.to_string(),
        render_iso_us(b.bucket_start_us),
        render_e8(b.open_e8),
        render_e8(b.high_e8),
        render_e8(b.low_e8),
        render_e8(b.close_e8),
        render_e8(b.volume_e8),
        b.trade_count.to_string(),
    ]
}

fn sink_err(e: impl std::fmt::Display) -> QueryError {
    QueryError::Sink(e.to_string())
}

/// Rows are pre-rendered strings; sequence and trade_count stay JSON numbers.
fn write_rows<const N: usize>(
    header: &[&str; N],
    numeric: &[&str],
    rows: impl Iterator<Item = [String; N]>,
    format: ExportFormat,
    sink: &mut dyn Write,
) -> Result<u64, QueryError> {
    let mut n = 0u64;
    match format {
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(sink);
            w.write_record(header).map_err(sink_err)?;
            for r in rows {
                w.write_record(&r).map_err(sink_err)?;
                n += 1;
            }
            w.flush().map_err(sink_err)?;
        }
        ExportFormat::Jsonl => {
            for r in rows {
                let obj: BTreeMap<&str, Value> = header
                    .iter()
                    .zip(r)
                    .map(|(k, v)| {
                        let v = if numeric.contains(k) {
                            v.parse::<u64>().map(Value::from).unwrap_or(Value::String(v))
                        } else {
                            Value::String(v)
                        };
                        (*k, v)
                    })
                    .collect();
                let mut line = serde_json::to_vec(&obj).map_err(sink_err)?;
                line.push(b'\n');
                sink.write_all(&line).map_err(sink_err)?;
                n += 1;
            }
            sink.flush().map_err(sink_err)?;
        }
    }
    Ok(n)
}

/// Writes events with the table's column names and order. Returns the row count.
pub fn export_events(events: &[MarketEvent], format: ExportFormat, sink: &mut dyn Write) -> Result<u64, QueryError> {
    let header: [&str; 10] = COLUMNS.map(|(n, _)| n);
    write_rows(&header, &["sequence"], events.iter().map(event_row), format, sink)
}

/// Writes bars symbol by symbol, each in bucket order.
pub fn export_bars(
    bars: &BTreeMap<String, Vec<OhlcvBar>>,
    format: ExportFormat,
    sink: &mut dyn Write,
) -> Result<u64, QueryError> {
    let rows = bars.iter().flat_map(|(s, bs)| bs.iter().map(move |b| bar_row(s, b)));
    write_rows(&BAR_COLUMNS, &["trade_count"], rows, format, sink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_e8, Side, StreamKind};
    use proptest::prelude::*;

    fn ev(price: i64, qty: i64) -> MarketEvent {
        MarketEvent {
            source: "synth".into(),
            stream: StreamKind::Trade,
            symbol: "BTC-USD".into(),
            event_time_us: 1_614_859_200_000_001,
            ingest_time_us: 1_614_859_200_000_101,
            sequence: 3,
            event_id: "t,1".into(),
            price_e8: price,
            qty_e8: qty,
            side: Side::Buy,
        }
    }

    fn render(events: &[MarketEvent], f: ExportFormat) -> String {
        let mut out = Vec::new();
        export_events(events, f, &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    #[test]
    fn csv_layout() {
        assert_eq!(
            render(&[ev(1_234_500_000_000, 5)], ExportFormat::Csv),
            "event_time_us,ingest_time_us,source,stream,symbol,sequence,event_id,price_e8,qty_e8,side\n\
             2021-03-04T12:00:00.000001Z,2021-03-04T12:00:00.000101Z,synth,trade,BTC-USD,3,\"t,1\",12345.00000000,0.00000005,buy\n"
        );
        assert_eq!(render(&[], ExportFormat::Csv).lines().count(), 1);
    }

    #[test]
    fn jsonl_layout() {
        assert_eq!(
            render(&[ev(-150_000_000, 0)], ExportFormat::Jsonl),
            "{\"event_id\":\"t,1\",\"event_time_us\":\"2021-03-04T12:00:00.000001Z\",\"ingest_time_us\":\"2021-03-04T12:00:00.000101Z\",\
             \"price_e8\":\"-1.50000000\",\"qty_e8\":\"0.00000000\",\"sequence\":3,\"side\":\"buy\",\"source\":\"synth\",\"stream\":\"trade\",\"symbol\":\"BTC-USD\"}\n"
        );
        assert_eq!(render(&[], ExportFormat::Jsonl), "");
    }

    #[test]
    fn bars_layout() {
        let mut m = BTreeMap::new();
        m.insert(
            "BTC-USD".to_string(),
            vec![OhlcvBar {
                bucket_start_us: 0,
                open_e8: 1,
                high_e8: 2,
                low_e8: 1,
                close_e8: 2,
                volume_e8: 100_000_000,
                trade_count: 2,
            }],
        );
        let mut out = Vec::new();
        assert_eq!(export_bars(&m, ExportFormat::Csv, &mut out).unwrap(), 1);
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "symbol,bucket_start_us,open_e8,high_e8,low_e8,close_e8,volume_e8,trade_count\n\
             BTC-USD,1970-01-01T00:00:00.000000Z,0.00000001,0.00000002,0.00000001,0.00000002,1.00000000,2\n"
        );
    }

    proptest! {
        #[test]
        fn csv_round_trips_e8(prices in prop::collection::vec((any::<i64>(), any::<i64>()), 0..50)) {
            let events: Vec<_> = prices.iter().map(|(p, q)| ev(*p, *q)).collect();
            let text = render(&events, ExportFormat::Csv);
            let mut r = csv::Reader::from_reader(text.as_bytes());
            let back: Vec<(i64, i64)> = r.records().map(|rec| {
                let rec = rec.unwrap();
                (parse_e8(&rec[7]).unwrap(), parse_e8(&rec[8]).unwrap())
            }).collect();
            prop_assert_eq!(back, prices);
        }
    }
}
