use std::collections::HashMap;

use super::{
    decimal::parse_e8, ConnectorConfig, IngestError, MarketEvent, RawEvent, Side, StreamKind,
};

/// Turn a raw event into a [`MarketEvent`]. The returned event has
/// `sequence = 0`; the caller stamps it with [`SequenceCounter::assign`].
pub fn normalize(
    raw: &RawEvent,
    config: &ConnectorConfig,
    ingest_time_us: i64,
) -> Result<MarketEvent, IngestError> {
    let stream = StreamKind::parse(&raw.stream).ok_or_else(|| IngestError::BadStream(raw.stream.clone()))?;
    let symbol = config
        .map_symbol(&raw.raw_symbol)
        .ok_or_else(|| IngestError::UnknownSymbol(raw.raw_symbol.clone()))?;

    let field = |name: &str| -> Result<&str, IngestError> {
        raw.payload
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| IngestError::MissingField(name.to_string(), raw.line_no.unwrap_or(0)))
    };
    let price_e8 = parse_e8(field("price")?).ok_or_else(|| IngestError::BadDecimal("price".into()))?;
    let qty_e8 = parse_e8(field("qty")?).ok_or_else(|| IngestError::BadDecimal("qty".into()))?;
    let event_id = field("id")?.to_string();

    let side = match raw.payload.get("side") {
        None if stream != StreamKind::Trade => Side::Na,
        None => return Err(IngestError::MissingField("side".into(), raw.line_no.unwrap_or(0))),
        Some(s) => Side::parse(&s.to_ascii_lowercase()).ok_or_else(|| IngestError::BadSide(s.clone()))?,
    };

    if stream == StreamKind::Trade {
        if price_e8 <= 0 {
            return Err(IngestError::BadDecimal("price".into()));
        }
        if qty_e8 <= 0 {
            return Err(IngestError::BadDecimal("qty".into()));
        }
        if side == Side::Na {
            return Err(IngestError::BadSide(side.as_str().into()));
        }
    }

    Ok(MarketEvent {
        source: config.source.clone(),
        stream,
        symbol: symbol.to_string(),
        event_time_us: raw.event_time_us,
        ingest_time_us,
        sequence: 0,
        event_id,
        price_e8,
        qty_e8,
        side,
    })
}

/// Per-`(source, stream, symbol)` monotone sequence numbers for one connector session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SequenceCounter {
    next: HashMap<(String, StreamKind, String), u64>,
}

impl SequenceCounter {
    pub fn assign(&mut self, event: &mut MarketEvent) {
        let slot = self
            .next
            .entry((event.source.clone(), event.stream, event.symbol.clone()))
            .or_insert(0);
        event.sequence = *slot;
        *slot += 1;
    }

    /// Flattened `"source|stream|symbol" -> next` map for persistence.
    pub fn to_map(&self) -> std::collections::BTreeMap<String, u64> {
        self.next
            .iter()
            .map(|((src, stream, sym), n)| (format!("{src}|{}|{sym}", stream.as_str()), *n))
            .collect()
    }

    pub fn from_map(map: &std::collections::BTreeMap<String, u64>) -> Self {
        let next = map
            .iter()
            .filter_map(|(k, n)| {
                let mut parts = k.splitn(3, '|');
                let src = parts.next()?.to_string();
                let stream = StreamKind::parse(parts.next()?)?;
                let sym = parts.next()?.to_string();
                Some(((src, stream, sym), *n))
            })
            .collect();
        SequenceCounter { next }
    }
}
