//! Five-field cron expressions: minute, hour, day of month, month, day of
//! week. A field is `*`, a number, a comma list of numbers, or `*/k`.
//!
//! When both day fields are restricted a day matches if either matches; if
//! either starts with `*` both must match. This is the classic Vixie rule.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc};

/// Days searched before giving up on a spec.
pub const HORIZON_DAYS: i64 = 4 * 366;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CronError {
    #[error("cron spec must have 5 fields, got {0}")]
    FieldCount(usize),
    #[error("invalid {field} field {text:?}: {reason}")]
    Field {
        field: &'static str,
        text: String,
        reason: String,
    },
    #[error("cron spec {0:?} can never match")]
    Unsatisfiable(String),
    #[error("no match for {0:?} within four years")]
    NoMatch(String),
}

#[derive(Clone, Copy)]
struct FieldDef {
    name: &'static str,
    min: u32,
    max: u32,
}

const FIELDS: [FieldDef; 5] = [
    FieldDef { name: "minute", min: 0, max: 59 },
    FieldDef { name: "hour", min: 0, max: 23 },
    FieldDef { name: "day-of-month", min: 1, max: 31 },
    FieldDef { name: "month", min: 1, max: 12 },
    FieldDef { name: "day-of-week", min: 0, max: 6 },
];

/// A parsed cron expression. Each field is a bit set over its legal values.
#[derive(Clone, PartialEq, Eq)]
pub struct CronSpec {
    source: String,
    minute: u64,
    hour: u64,
    dom: u64,
    month: u64,
    dow: u64,
    dom_star: bool,
    dow_star: bool,
}

impl fmt::Debug for CronSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CronSpec({:?})", self.source)
    }
}

impl fmt::Display for CronSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn parse_field(text: &str, def: FieldDef) -> Result<u64, CronError> {
    let err = |reason: String| CronError::Field {
        field: def.name,
        text: text.to_string(),
        reason,
    };
    let all = |step: u32| {
        (def.min..=def.max)
            .step_by(step as usize)
            .fold(0u64, |acc, v| acc | 1 << v)
    };
    if text == "*" {
        return Ok(all(1));
    }
    if let Some(step) = text.strip_prefix("*/") {
        let k: u32 = step.parse().map_err(|_| err(format!("bad step {step:?}")))?;
        if k == 0 {
            return Err(err("step must be at least 1".into()));
        }
        return Ok(all(k));
    }
    let mut bits = 0u64;
    for item in text.split(',') {
        let v: u32 = item
            .parse()
            .map_err(|_| err(format!("{item:?} is not a number")))?;
        if v < def.min || v > def.max {
            return Err(err(format!("{v} outside {}-{}", def.min, def.max)));
        }
        bits |= 1 << v;
    }
    Ok(bits)
}

fn days_in_month(month: u32, leap: bool) -> u32 {
    match month {
        2 if leap => 29,
        2 => 28,
        4 | 6 | 9 | 11 => 30,
        _ => 31,
    }
}

impl FromStr for CronSpec {
    type Err = CronError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(CronError::FieldCount(parts.len()));
        }
        let mut bits = [0u64; 5];
        for (i, (text, def)) in parts.iter().zip(FIELDS).enumerate() {
            bits[i] = parse_field(text, def)?;
        }
        let spec = CronSpec {
            source: parts.join(" "),
            minute: bits[0],
            hour: bits[1],
            dom: bits[2],
            month: bits[3],
            dow: bits[4],
            dom_star: parts[2].starts_with('*'),
            dow_star: parts[4].starts_with('*'),
        };
        // with AND semantics the day of month alone must fit some month
        if spec.dom_star || spec.dow_star {
            let possible = (1..=12u32)
                .filter(|m| spec.month & 1 << m != 0)
                .any(|m| (1..=days_in_month(m, true)).any(|d| spec.dom & 1 << d != 0));
            if !possible {
                return Err(CronError::Unsatisfiable(spec.source));
            }
        }
        Ok(spec)
    }
}

impl CronSpec {
    pub fn parse(s: &str) -> Result<Self, CronError> {
        s.parse()
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    fn day_matches(&self, date: NaiveDate) -> bool {
        if self.month & 1 << date.month() == 0 {
            return false;
        }
        let dom = self.dom & 1 << date.day() != 0;
        let dow = self.dow & 1 << date.weekday().num_days_from_sunday() != 0;
        if self.dom_star || self.dow_star {
            dom && dow
        } else {
            dom || dow
        }
    }

    /// Whether the minute containing `t` matches.
    pub fn matches(&self, t: DateTime<Utc>) -> bool {
        self.day_matches(t.date_naive())
            && self.hour & 1 << t.hour() != 0
            && self.minute & 1 << t.minute() != 0
    }

    /// First matching time within `[from_hour:from_minute, 23:59]`.
    fn first_in_day(&self, from_hour: u32, from_minute: u32) -> Option<(u32, u32)> {
        for h in from_hour..24 {
            if self.hour & 1 << h == 0 {
                continue;
            }
            let m0 = if h == from_hour { from_minute } else { 0 };
            if let Some(m) = (m0..60).find(|m| self.minute & 1 << m != 0) {
                return Some((h, m));
            }
        }
        None
    }

    /// The first whole minute strictly after `after` that matches.
    pub fn next_after(&self, after: DateTime<Utc>) -> Result<DateTime<Utc>, CronError> {
        let floor = after
            .with_second(0)
            .and_then(|t| t.with_nanosecond(0))
            .expect("valid time");
        let start = floor + Duration::minutes(1);
        let mut date = start.date_naive();
        let (mut h, mut m) = (start.hour(), start.minute());
        for _ in 0..=HORIZON_DAYS {
            if self.day_matches(date) {
                if let Some((hh, mm)) = self.first_in_day(h, m) {
                    let t = date.and_hms_opt(hh, mm, 0).expect("valid time").and_utc();
                    return Ok(t);
                }
            }
            date = match date.succ_opt() {
                Some(d) => d,
                None => break,
            };
            (h, m) = (0, 0);
        }
        Err(CronError::NoMatch(self.source.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, mo, d, h, mi, s).unwrap()
    }

    fn next(spec: &str, after: DateTime<Utc>) -> DateTime<Utc> {
        CronSpec::parse(spec).unwrap().next_after(after).unwrap()
    }

    #[test]
    fn documented_examples() {
        assert_eq!(next("* * * * *", t(2024, 3, 1, 12, 0, 30)), t(2024, 3, 1, 12, 1, 0));
        assert_eq!(next("0 0 1 1 *", t(2024, 6, 15, 0, 0, 0)), t(2025, 1, 1, 0, 0, 0));
        assert_eq!(next("*/15 * * * *", t(2024, 3, 1, 12, 7, 0)), t(2024, 3, 1, 12, 15, 0));
    }

    #[test]
    fn strictly_after_a_matching_minute() {
        assert_eq!(next("30 12 * * *", t(2024, 3, 1, 12, 30, 0)), t(2024, 3, 2, 12, 30, 0));
    }

    #[test]
    fn day_fields_combine_like_vixie_cron() {
        // both restricted: the 13th or any Friday
        let s = CronSpec::parse("0 0 13 * 5").unwrap();
        assert_eq!(s.next_after(t(2024, 9, 1, 0, 0, 0)).unwrap(), t(2024, 9, 6, 0, 0, 0));
        assert_eq!(s.next_after(t(2024, 9, 10, 0, 0, 0)).unwrap(), t(2024, 9, 13, 0, 0, 0));
        // a star-prefixed day field makes both required
        let s = CronSpec::parse("0 0 */2 * 1").unwrap();
        let n = s.next_after(t(2024, 9, 1, 0, 0, 0)).unwrap();
        assert_eq!(n.weekday().num_days_from_sunday(), 1);
        assert_eq!(n.day() % 2, 1);
    }

    #[test]
    fn leap_day() {
        assert_eq!(next("0 0 29 2 *", t(2025, 1, 1, 0, 0, 0)), t(2028, 2, 29, 0, 0, 0));
    }

    #[test]
    fn parse_errors() {
        for bad in [
            "* * * *",
            "60 * * * *",
            "* 24 * * *",
            "* * 0 * *",
            "* * * 13 *",
            "* * * * 7",
            "*/0 * * * *",
            "a * * * *",
            "1-5 * * * *",
            "1,,2 * * * *",
        ] {
            assert!(CronSpec::parse(bad).is_err(), "{bad}");
        }
        assert!(matches!(
            CronSpec::parse("0 0 30 2 *"),
            Err(CronError::Unsatisfiable(_))
        ));
        assert!(matches!(
            CronSpec::parse("0 0 31 4,6 *"),
            Err(CronError::Unsatisfiable(_))
        ));
        // with a restricted weekday the OR rule keeps it satisfiable
        assert!(CronSpec::parse("0 0 30 2 1").is_ok());
    }

    #[test]
    fn bounded_search_failure() {
        // Feb 29 that is also a Sunday: 2032, more than four years after 2025
        let s = CronSpec::parse("0 0 29 2 */7").unwrap();
        assert!(matches!(
            s.next_after(t(2025, 1, 1, 0, 0, 0)),
            Err(CronError::NoMatch(_))
        ));
        assert_eq!(s.next_after(t(2029, 1, 1, 0, 0, 0)).unwrap(), t(2032, 2, 29, 0, 0, 0));
    }
}
