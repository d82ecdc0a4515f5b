//! Event acquisition: synthetic and replay connectors, normalization into
//! [`MarketEvent`], rate limiting, and the connector session that appends to
//! staging with at-least-once delivery.

mod connector;
mod decimal;
mod normalize;
mod rate_limit;
mod replay;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use connector::{
    load_position, run_connector, ConnectorPosition, ConnectorRuntime, IngestStamp, SessionSummary,
};
pub use decimal::{parse_e8, render_e8};
pub use normalize::{normalize, SequenceCounter};
pub use rate_limit::{take_token, Decision, TokenBucket};
pub use replay::{replay_file, replay_reader};
pub use synthetic::{generate_synthetic, SplitMix64, SyntheticStream, SYNTHETIC_EPOCH_US, SYNTHETIC_START_PRICE_E8};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Trade,
    Quote,
    BookSnapshot,
}

impl StreamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Trade => "trade",
            StreamKind::Quote => "quote",
            StreamKind::BookSnapshot => "book_snapshot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "trade" => Some(StreamKind::Trade),
            "quote" => Some(StreamKind::Quote),
            "book_snapshot" => Some(StreamKind::BookSnapshot),
            _ => None,
        }
    }

    /// Payload keys a raw event of this stream must carry.
    pub fn required_payload(self) -> &'static [&'static str] {
        match self {
            StreamKind::Trade => &["price", "qty", "side", "id"],
            StreamKind::Quote | StreamKind::BookSnapshot => &["price", "qty", "id"],
        }
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Buy,
    Sell,
    Na,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
            Side::Na => "na",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "buy" => Some(Side::Buy),
            "sell" => Some(Side::Sell),
            "na" => Some(Side::Na),
            _ => None,
        }
    }
}

/// A scraper's output record, before normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEvent {
    pub source: String,
    pub stream: String,
    pub raw_symbol: String,
    pub event_time_us: i64,
    pub payload: BTreeMap<String, String>,
    /// 1-based line in the replay file, when replayed.
    #[serde(skip)]
    pub line_no: Option<usize>,
}

/// Canonical normalized tick.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarketEvent {
    pub source: String,
    pub stream: StreamKind,
    pub symbol: String,
    pub event_time_us: i64,
    pub ingest_time_us: i64,
    pub sequence: u64,
    pub event_id: String,
    pub price_e8: i64,
    pub qty_e8: i64,
    pub side: Side,
}

/// `(source, stream, symbol, event_id)`; two events with equal identity are
/// deliveries of the same upstream event.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DedupIdentity {
    pub source: String,
    pub stream: StreamKind,
    pub symbol: String,
    pub event_id: String,
}

impl MarketEvent {
    pub fn identity(&self) -> DedupIdentity {
        DedupIdentity {
            source: self.source.clone(),
            stream: self.stream,
            symbol: self.symbol.clone(),
            event_id: self.event_id.clone(),
        }
    }

    /// Table sort order: `(event_time_us, sequence, event_id)`, then source
    /// and stream so that the order is total.
    pub fn sort_key(&self) -> (i64, u64, &str, &str, StreamKind) {
        (
            self.event_time_us,
            self.sequence,
            &self.event_id,
            &self.source,
            self.stream,
        )
    }
}

pub fn cmp_events(a: &MarketEvent, b: &MarketEvent) -> std::cmp::Ordering {
    a.sort_key().cmp(&b.sort_key())
}

pub fn is_valid_source(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

/// `^[A-Z0-9]+-[A-Z0-9]+$`
pub fn is_valid_symbol(s: &str) -> bool {
    let ok = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit());
    match s.split_once('-') {
        Some((base, quote)) => ok(base) && ok(quote),
        None => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectorKind {
    Synthetic,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolMapping {
    pub raw: String,
    pub normalized: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimit {
    pub rate_per_s: u64,
    pub burst: u64,
}

impl Default for RateLimit {
    fn default() -> Self {
        RateLimit {
            rate_per_s: 1_000_000,
            burst: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectorConfig {
    pub connector_id: String,
    pub kind: ConnectorKind,
    pub source: String,
    pub symbols: Vec<SymbolMapping>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub count: u64,
    #[serde(default)]
    pub dup_prob_bp: u32,
    #[serde(default)]
    pub rate_limit: RateLimit,
    #[serde(default)]
    pub replay_path: Option<String>,
}

impl ConnectorConfig {
    pub fn synthetic(connector_id: &str, source: &str, symbols: &[(&str, &str)]) -> Self {
        ConnectorConfig {
            connector_id: connector_id.to_string(),
            kind: ConnectorKind::Synthetic,
            source: source.to_string(),
            symbols: symbols
                .iter()
                .map(|(r, n)| SymbolMapping {
                    raw: r.to_string(),
                    normalized: n.to_string(),
                })
                .collect(),
            seed: 0,
            count: 0,
            dup_prob_bp: 0,
            rate_limit: RateLimit::default(),
            replay_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |reason: String| Err(IngestError::InvalidConfig(reason));
        if !crate::objectstore::is_valid_segment(&self.connector_id) {
            return bad(format!("connector_id {:?} is not a valid key segment", self.connector_id));
        }
        if !is_valid_source(&self.source) {
            return bad(format!("source {:?} must match [a-z0-9_-]+", self.source));
        }
        if self.dup_prob_bp > 10_000 {
            return bad("dup_prob_bp must be in [0, 10000]".into());
        }
        if self.rate_limit.rate_per_s < 1 || self.rate_limit.burst < 1 {
            return bad("rate_per_s and burst must be >= 1".into());
        }
        for m in &self.symbols {
            if !is_valid_symbol(&m.normalized) {
                return bad(format!("normalized symbol {:?} must look like BASE-QUOTE", m.normalized));
            }
        }
        match self.kind {
            ConnectorKind::Synthetic if self.symbols.is_empty() && self.count > 0 => {
                bad("synthetic connector needs at least one symbol".into())
            }
            ConnectorKind::Replay if self.replay_path.is_none() => bad("replay connector needs replay_path".into()),
            _ => Ok(()),
        }
    }

    pub fn map_symbol(&self, raw: &str) -> Option<&str> {
        self.symbols
            .iter()
            .find(|m| m.raw == raw)
            .map(|m| m.normalized.as_str())
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed replay line {0}")]
    MalformedLine(usize),
    #[error("missing field {0:?} on line {1}")]
    MissingField(String, usize),
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("bad decimal in field {0:?}")]
    BadDecimal(String),
    #[error("bad side {0:?}")]
    BadSide(String),
    #[error("bad stream {0:?}")]
    BadStream(String),
    #[error("invalid connector config: {0}")]
    InvalidConfig(String),
    #[error("staging unavailable: {0}")]
    StagingUnavailable(#[source] crate::staging::StagingError),
    #[error(transparent)]
    Crash(#[from] crate::fault::InjectedCrash),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl IngestError {
    pub fn kind(&self) -> &'static str {
        match self {
            IngestError::MalformedLine(_) => "MalformedLine",
            IngestError::MissingField(..) => "MissingField",
            IngestError::UnknownSymbol(_) => "UnknownSymbol",
            IngestError::BadDecimal(_) => "BadDecimal",
            IngestError::BadSide(_) => "BadSide",
            IngestError::BadStream(_) => "BadStream",
            IngestError::InvalidConfig(_) => "InvalidConfig",
            IngestError::StagingUnavailable(e) => e.kind(),
            IngestError::Crash(_) => "InjectedCrash",
            IngestError::Io(_) => "Io",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbol_grammar() {
        assert!(is_valid_symbol("BTC-USDT"));
        assert!(is_valid_symbol("1INCH-USD"));
        assert!(!is_valid_symbol("btc-usd"));
        assert!(!is_valid_symbol("BTCUSD"));
        assert!(!is_valid_symbol("BTC-"));
        assert!(!is_valid_symbol("A-B-C"));
    }

    #[test]
    fn config_validation() {
        let mut c = ConnectorConfig::synthetic("c", "synth", &[("BTCUSD", "BTC-USD")]);
        assert!(c.validate().is_ok());
        c.dup_prob_bp = 10_001;
        assert!(c.validate().is_err());
        c.dup_prob_bp = 0;
        c.rate_limit.burst = 0;
        assert!(c.validate().is_err());
        c.rate_limit.burst = 1;
        c.source = "Binance".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let c: ConnectorConfig = serde_json::from_str(
            r#"{"connector_id":"c1","kind":"synthetic","source":"synth","symbols":[{"raw":"BTCUSD","normalized":"BTC-USD"}],"seed":7,"count":10}"#,
        )
        .unwrap();
        assert_eq!(c.dup_prob_bp, 0);
        assert_eq!(c.map_symbol("BTCUSD"), Some("BTC-USD"));
        assert_eq!(c.map_symbol("ETHUSD"), None);
    }
}
