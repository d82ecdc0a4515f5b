//! Microsecond timestamp helpers (UTC only).

use chrono::{DateTime, Datelike, NaiveDate, SecondsFormat, Utc};

pub const US_PER_SECOND: i64 = 1_000_000;
pub const US_PER_DAY: i64 = 86_400_000_000;

/// Days since the epoch, floored (so pre-epoch instants land on the earlier day).
pub fn day_number(t_us: i64) -> i64 {
    t_us.div_euclid(US_PER_DAY)
}

pub fn date_of(t_us: i64) -> NaiveDate {
    date_from_day_number(day_number(t_us))
}

pub fn date_from_day_number(day: i64) -> NaiveDate {
    NaiveDate::from_num_days_from_ce_opt((day + 719_163) as i32).expect("date in range")
}

pub fn day_number_of(date: NaiveDate) -> i64 {
    date.num_days_from_ce() as i64 - 719_163
}

pub fn datetime(t_us: i64) -> Option<DateTime<Utc>> {
    DateTime::from_timestamp_micros(t_us)
}

/// `2021-03-04T12:00:00.000000Z`
pub fn render_iso_us(t_us: i64) -> String {
    match datetime(t_us) {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Micros, true),
        None => t_us.to_string(),
    }
}

/// Accepts RFC 3339 (`2021-03-04T00:05:00Z`, offsets, fractional seconds) and
/// bare dates (`2021-03-04`, midnight UTC).
pub fn parse_iso_us(s: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc).timestamp_micros());
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    Some(day_number_of(d) * US_PER_DAY)
}
