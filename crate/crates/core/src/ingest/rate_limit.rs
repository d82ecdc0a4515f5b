/// Token bucket in integer micro-tokens, so refill is exact for any rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenBucket {
    rate_per_s: u64,
    burst: u64,
    micro_tokens: u128,
    last_us: i64,
}

const MICRO: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny,
}

impl TokenBucket {
    /// Starts full, with `burst` tokens, at `now_us`.
    pub fn new(rate_per_s: u64, burst: u64, now_us: i64) -> Self {
        TokenBucket {
            rate_per_s: rate_per_s.max(1),
            burst: burst.max(1),
            micro_tokens: burst.max(1) as u128 * MICRO,
            last_us: now_us,
        }
    }

    fn refill(&mut self, now_us: i64) {
        if now_us > self.last_us {
            let elapsed = (now_us - self.last_us) as u128;
            let cap = self.burst as u128 * MICRO;
            self.micro_tokens = (self.micro_tokens + elapsed * self.rate_per_s as u128).min(cap);
            self.last_us = now_us;
        }
    }

    pub fn take(&mut self, now_us: i64) -> Decision {
        self.refill(now_us);
        if self.micro_tokens >= MICRO {
            self.micro_tokens -= MICRO;
            Decision::Allow
        } else {
            Decision::Deny
        }
    }

    /// Earliest instant at which `take` would allow, given no other callers.
    pub fn next_available_us(&self) -> i64 {
        if self.micro_tokens >= MICRO {
            return self.last_us;
        }
        let missing = MICRO - self.micro_tokens;
        let wait = missing.div_ceil(self.rate_per_s as u128);
        self.last_us + wait as i64
    }

    pub fn tokens(&self) -> f64 {
        self.micro_tokens as f64 / MICRO as f64
    }
}

/// Functional form: returns the decision and the updated bucket.
pub fn take_token(bucket: TokenBucket, now_us: i64) -> (Decision, TokenBucket) {
    let mut b = bucket;
    let d = b.take(now_us);
    (d, b)
}
