use std::collections::BTreeMap;

use serde::Serialize;

use super::QueryError;
use crate::ingest::{MarketEvent, StreamKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OhlcvBar {
    pub bucket_start_us: i64,
    pub open_e8: i64,
    pub high_e8: i64,
    pub low_e8: i64,
    pub close_e8: i64,
    pub volume_e8: i64,
    pub trade_count: u64,
}

/// `30s`, `1m`, `15m`, `1h`, `1d`, or a bare microsecond count.
pub fn parse_width(s: &str) -> Option<i64> {
    let unit = |suffix: &str, us: i64| s.strip_suffix(suffix).and_then(|n| n.parse::<i64>().ok()).map(|n| n * us);
    let w = if let Ok(n) = s.parse::<i64>() {
        Some(n)
    } else {
        unit("us", 1)
            .or_else(|| unit("ms", 1_000))
            .or_else(|| unit("s", 1_000_000))
            .or_else(|| unit("m", 60_000_000))
            .or_else(|| unit("h", 3_600_000_000))
            .or_else(|| unit("d", 86_400_000_000))
    };
    w.filter(|w| *w > 0)
}

/// Bars over one symbol's trades in scan order. Empty buckets are omitted.
pub fn ohlcv(events: &[MarketEvent], width_us: i64) -> Result<Vec<OhlcvBar>, QueryError> {
    if width_us <= 0 {
        return Err(QueryError::InvalidRequest(format!("bar width {width_us} must be positive")));
    }
    let mut bars: Vec<OhlcvBar> = Vec::new();
    for e in events {
        if e.stream != StreamKind::Trade {
            return Err(QueryError::NonTradeEvent(e.event_id.clone()));
        }
        if e.symbol != events[0].symbol {
            return Err(QueryError::MixedSymbols(events[0].symbol.clone(), e.symbol.clone()));
        }
        let bucket = e.event_time_us.div_euclid(width_us) * width_us;
        match bars.last_mut() {
            Some(b) if b.bucket_start_us == bucket => {
                b.high_e8 = b.high_e8.max(e.price_e8);
                b.low_e8 = b.low_e8.min(e.price_e8);
                b.close_e8 = e.price_e8;
                b.volume_e8 += e.qty_e8;
                b.trade_count += 1;
            }
            _ => bars.push(OhlcvBar {
                bucket_start_us: bucket,
                open_e8: e.price_e8,
                high_e8: e.price_e8,
                low_e8: e.price_e8,
                close_e8: e.price_e8,
                volume_e8: e.qty_e8,
                trade_count: 1,
            }),
        }
    }
    Ok(bars)
}

/// Splits a multi-symbol scan and bars each symbol separately.
pub fn ohlcv_by_symbol(events: &[MarketEvent], width_us: i64) -> Result<BTreeMap<String, Vec<OhlcvBar>>, QueryError> {
    let mut per: BTreeMap<String, Vec<MarketEvent>> = BTreeMap::new();
    for e in events {
        per.entry(e.symbol.clone()).or_default().push(e.clone());
    }
    per.into_iter().map(|(s, ev)| Ok((s, ohlcv(&ev, width_us)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{cmp_events, Side};
    use proptest::prelude::*;

    const E8: i64 = 100_000_000;

    fn trade(t: i64, price: i64, qty: i64) -> MarketEvent {
        MarketEvent {
            source: "s".into(),
            stream: StreamKind::Trade,
            symbol: "BTC-USD".into(),
            event_time_us: t,
            ingest_time_us: t,
            sequence: t as u64,
            event_id: t.to_string(),
            price_e8: price,
            qty_e8: qty,
            side: Side::Buy,
        }
    }

    #[test]
    fn one_bucket() {
        let ev: Vec<_> = [10, 12, 9, 11].iter().enumerate().map(|(i, p)| trade(i as i64, p * E8, E8)).collect();
        let bars = ohlcv(&ev, 60_000_000).unwrap();
        assert_eq!(
            bars,
            [OhlcvBar {
                bucket_start_us: 0,
                open_e8: 10 * E8,
                high_e8: 12 * E8,
                low_e8: 9 * E8,
                close_e8: 11 * E8,
                volume_e8: 4 * E8,
                trade_count: 4
            }]
        );
    }

    #[test]
    fn single_trade_and_gaps() {
        let bars = ohlcv(&[trade(5, 7, 3)], 10).unwrap();
        assert_eq!((bars[0].open_e8, bars[0].high_e8, bars[0].low_e8, bars[0].close_e8, bars[0].volume_e8), (7, 7, 7, 7, 3));
        let bars = ohlcv(&[trade(5, 1, 1), trade(35, 2, 1)], 10).unwrap();
        assert_eq!(bars.iter().map(|b| b.bucket_start_us).collect::<Vec<_>>(), [0, 30]);
        let neg = ohlcv(&[trade(-5, 1, 1)], 10).unwrap();
        assert_eq!(neg[0].bucket_start_us, -10);
    }

    #[test]
    fn rejects_quotes_and_mixed_symbols() {
        let mut q = trade(1, 1, 1);
        q.stream = StreamKind::Quote;
        assert_eq!(ohlcv(&[q], 10).unwrap_err().kind(), "NonTradeEvent");
        let mut other = trade(2, 1, 1);
        other.symbol = "ETH-USD".into();
        assert_eq!(ohlcv(&[trade(1, 1, 1), other.clone()], 10).unwrap_err().kind(), "MixedSymbols");
        assert_eq!(ohlcv_by_symbol(&[trade(1, 1, 1), other], 10).unwrap().len(), 2);
    }

    #[test]
    fn widths() {
        assert_eq!(parse_width("1m"), Some(60_000_000));
        assert_eq!(parse_width("30s"), Some(30_000_000));
        assert_eq!(parse_width("1h"), Some(3_600_000_000));
        assert_eq!(parse_width("250ms"), Some(250_000));
        assert_eq!(parse_width("1000"), Some(1000));
        assert_eq!(parse_width("0m"), None);
        assert_eq!(parse_width("1w"), None);
    }

    proptest! {
        #[test]
        fn conservation(
            raw in prop::collection::vec((0i64..10_000, 1i64..1_000_000, 0i64..1_000_000), 0..200),
            width in 1i64..3_000,
        ) {
            let mut ev: Vec<_> = raw.iter().enumerate().map(|(i, (t, p, q))| {
                let mut e = trade(*t, *p, *q);
                e.sequence = i as u64;
                e.event_id = i.to_string();
                e
            }).collect();
            ev.sort_by(cmp_events);
            let bars = ohlcv(&ev, width).unwrap();
            prop_assert_eq!(bars.iter().map(|b| b.volume_e8).sum::<i64>(), ev.iter().map(|e| e.qty_e8).sum::<i64>());
            prop_assert_eq!(bars.iter().map(|b| b.trade_count).sum::<u64>(), ev.len() as u64);
            for w in bars.windows(2) {
                prop_assert!(w[0].bucket_start_us < w[1].bucket_start_us);
            }
            for b in &bars {
                prop_assert_eq!(b.bucket_start_us.rem_euclid(width), 0);
                prop_assert!(b.low_e8 <= b.open_e8.min(b.close_e8));
                prop_assert!(b.high_e8 >= b.open_e8.max(b.close_e8));
            }
        }
    }
}
