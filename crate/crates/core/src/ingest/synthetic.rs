use std::collections::BTreeMap;

use super::{decimal::render_e8, ConnectorConfig, RawEvent};

pub const SYNTHETIC_EPOCH_US: i64 = 1_600_000_000_000_000;
pub const SYNTHETIC_START_PRICE_E8: i64 = 10_000 * 100_000_000;

/// splitmix64; the generator's only entropy source.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z ^= z >> 30;
        z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z ^= z >> 27;
        z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Numeric draws for one primary event.
#[derive(Debug, Clone, Copy)]
struct Draw {
    n: u64,
    t: i64,
    price: i64,
    qty: i64,
    buy: bool,
    dup: bool,
}

/// Lazy form of [`generate_synthetic`]: yields the same raw events one at a
/// time and can skip ahead without building them.
#[derive(Debug, Clone)]
pub struct SyntheticStream<'a> {
    config: &'a ConnectorConfig,
    rng: SplitMix64,
    n: u64,
    t: i64,
    price: i64,
    /// The duplicate still owed for the last primary event.
    pending_dup: Option<Draw>,
}

impl<'a> SyntheticStream<'a> {
    pub fn new(config: &'a ConnectorConfig) -> Self {
        SyntheticStream {
            config,
            rng: SplitMix64::new(config.seed),
            n: 0,
            t: SYNTHETIC_EPOCH_US,
            price: SYNTHETIC_START_PRICE_E8,
            pending_dup: None,
        }
    }

    fn draw(&mut self) -> Option<Draw> {
        if self.n >= self.config.count || self.config.symbols.is_empty() {
            return None;
        }
        let rng = &mut self.rng;
        self.t += (1 + (rng.next_u64() % 1000) as i64) * 1000;
        self.price += ((rng.next_u64() % 101) as i64 - 50) * 10_000;
        self.price = self.price.max(1);
        let qty = (1 + (rng.next_u64() % 100) as i64) * 1_000_000;
        let buy = rng.next_u64().is_multiple_of(2);
        let dup = rng.next_u64() % 10_000 < self.config.dup_prob_bp as u64;
        let d = Draw {
            n: self.n,
            t: self.t,
            price: self.price,
            qty,
            buy,
            dup,
        };
        self.n += 1;
        Some(d)
    }

    fn build(&self, d: &Draw) -> RawEvent {
        let c = self.config;
        let mapping = &c.symbols[(d.n % c.symbols.len() as u64) as usize];
        let payload = BTreeMap::from([
            ("id".to_string(), format!("{}-{}", c.connector_id, d.n)),
            ("price".to_string(), render_e8(d.price)),
            ("qty".to_string(), render_e8(d.qty)),
            ("side".to_string(), if d.buy { "buy" } else { "sell" }.to_string()),
        ]);
        RawEvent {
            source: c.source.clone(),
            stream: "trade".to_string(),
            raw_symbol: mapping.raw.clone(),
            event_time_us: d.t,
            payload,
            line_no: None,
        }
    }

    fn next_draw(&mut self) -> Option<Draw> {
        if let Some(d) = self.pending_dup.take() {
            return Some(d);
        }
        let d = self.draw()?;
        if d.dup {
            self.pending_dup = Some(Draw { dup: false, ..d });
        }
        Some(d)
    }

    /// Skips `k` raw events. Returns how many were actually skipped.
    pub fn advance(&mut self, k: u64) -> u64 {
        (0..k).take_while(|_| self.next_draw().is_some()).count() as u64
    }

    /// Event time of the next raw event, without consuming it.
    pub fn peek_time(&self) -> Option<i64> {
        match &self.pending_dup {
            Some(d) => Some(d.t),
            None => self.clone().draw().map(|d| d.t),
        }
    }
}

impl Iterator for SyntheticStream<'_> {
    type Item = RawEvent;

    fn next(&mut self) -> Option<RawEvent> {
        let d = self.next_draw()?;
        Some(self.build(&d))
    }
}

/// Deterministic trade stream for `config`: `count` primary events, each
/// optionally followed by one exact duplicate. Symbols rotate round-robin
/// over `config.symbols`; a single price walk is shared across symbols.
pub fn generate_synthetic(config: &ConnectorConfig) -> Vec<RawEvent> {
    SyntheticStream::new(config).collect()
}
