//! Fixed-point decimal strings at 8 fractional digits.

const SCALE_DIGITS: usize = 8;

/// Parse `[-+]digits[.digits]` into an e8 integer, rounding half-to-even at the
/// ninth fractional digit. `None` when unparseable or outside `i64`.
pub fn parse_e8(s: &str) -> Option<i64> {
    let (negative, body) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }

    let mut magnitude: i128 = 0;
    for b in int_part.bytes() {
        magnitude = magnitude.checked_mul(10)?.checked_add((b - b'0') as i128)?;
        if magnitude > i64::MAX as i128 {
            return None;
        }
    }
    let frac = frac_part.as_bytes();
    for i in 0..SCALE_DIGITS {
        let d = frac.get(i).map(|b| (b - b'0') as i128).unwrap_or(0);
        magnitude = magnitude * 10 + d;
    }

    if frac.len() > SCALE_DIGITS {
        let ninth = frac[SCALE_DIGITS] - b'0';
        let rest_nonzero = frac[SCALE_DIGITS + 1..].iter().any(|&b| b != b'0');
        let round_up = match ninth {
            0..=4 => false,
            5 if !rest_nonzero => magnitude % 2 == 1,
            _ => true,
        };
        if round_up {
            magnitude += 1;
        }
    }

    let signed = if negative { -magnitude } else { magnitude };
    i64::try_from(signed).ok()
}

/// Render with exactly 8 fractional digits: `1_234_500_000_000` → `"12345.00000000"`.
pub fn render_e8(v: i64) -> String {
    let neg = v < 0;
    let m = v.unsigned_abs();
    let s = format!("{}.{:08}", m / 100_000_000, m % 100_000_000);
    if neg {
        format!("-{s}")
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scaling() {
        assert_eq!(parse_e8("12345"), Some(1_234_500_000_000));
        assert_eq!(parse_e8("0.5"), Some(50_000_000));
        assert_eq!(parse_e8(".5"), Some(50_000_000));
        assert_eq!(parse_e8("5."), Some(500_000_000));
        assert_eq!(parse_e8("-1.25"), Some(-125_000_000));
        assert_eq!(parse_e8("+1"), Some(100_000_000));
    }

    #[test]
    fn half_even_at_ninth_digit() {
        assert_eq!(parse_e8("0.000000004"), Some(0));
        assert_eq!(parse_e8("0.000000005"), Some(0)); // tie, 0 is even
        assert_eq!(parse_e8("0.000000015"), Some(2)); // tie, 1 -> 2
        assert_eq!(parse_e8("0.0000000050001"), Some(1));
        assert_eq!(parse_e8("0.000000006"), Some(1));
        assert_eq!(parse_e8("-0.000000015"), Some(-2));
        assert_eq!(parse_e8("0.99999999999"), Some(100_000_000));
    }

    #[test]
    fn rejects_garbage_and_overflow() {
        for s in ["", "-", ".", "1e5", "1,5", "abc", "1.2.3", " 1", "--1"] {
            assert_eq!(parse_e8(s), None, "{s:?}");
        }
        // i64::MAX / 1e8 ≈ 92_233_720_368.54775807
        assert_eq!(parse_e8("92233720368.54775807"), Some(i64::MAX));
        assert_eq!(parse_e8("92233720368.54775808"), None);
        assert_eq!(parse_e8("99999999999999999999999"), None);
    }

    #[test]
    fn rendering() {
        assert_eq!(render_e8(1_234_500_000_000), "12345.00000000");
        assert_eq!(render_e8(0), "0.00000000");
        assert_eq!(render_e8(-50_000_000), "-0.50000000");
        assert_eq!(render_e8(i64::MIN), "-92233720368.54775808");
    }

    proptest! {
        #[test]
        fn render_parse_roundtrip(v in (i64::MIN + 1)..=i64::MAX) {
            prop_assert_eq!(parse_e8(&render_e8(v)), Some(v));
        }
    }
}
