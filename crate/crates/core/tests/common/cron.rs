//! A minute-by-minute cron scan that shares no code with the scheduler:
//! its own field parser and its own calendar arithmetic.

use chrono::{DateTime, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use snafu_core::triggers::cron::{CronError, CronSpec};

/// Minutes the oracle scans: four years of 366 days.
const HORIZON_MINUTES: i64 = 4 * 366 * 1440;

/// Day number to (year, month, day), proleptic Gregorian, day 0 = 1970-01-01.
pub fn civil(days: i64) -> (i64, u32, u32) {
    let mut y = 1970;
    let mut d = days;
    loop {
        let len = if is_leap(y) { 366 } else { 365 };
        if d < len {
            break;
        }
        d -= len;
        y += 1;
    }
    let mut m = 1;
    loop {
        let len = month_len(y, m) as i64;
        if d < len {
            break;
        }
        d -= len;
        m += 1;
    }
    (y, m, d as u32 + 1)
}

pub fn is_leap(y: i64) -> bool {
    (y % 4 == 0 && y % 100 != 0) || y % 400 == 0
}

pub fn month_len(y: i64, m: u32) -> u32 {
    [31, if is_leap(y) { 29 } else { 28 }, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31][m as usize - 1]
}

/// 1970-01-01 was a Thursday; Sunday is 0.
pub fn weekday(days: i64) -> u32 {
    ((days + 4).rem_euclid(7)) as u32
}

pub struct Oracle {
    sets: Vec<Vec<bool>>,
    dom_star: bool,
    dow_star: bool,
}

impl Oracle {
    pub fn new(spec: &str) -> Oracle {
        let bounds = [(0, 59), (0, 23), (1, 31), (1, 12), (0, 6)];
        let fields: Vec<&str> = spec.split(' ').collect();
        let sets = fields
            .iter()
            .zip(bounds)
            .map(|(f, (lo, hi))| {
                let mut set = vec![false; hi + 1];
                for part in f.split(',') {
                    if part == "*" {
                        (lo..=hi).for_each(|v| set[v] = true);
                    } else if let Some(k) = part.strip_prefix("*/") {
                        let k: usize = k.parse().unwrap();
                        (lo..=hi).step_by(k).for_each(|v| set[v] = true);
                    } else {
                        set[part.parse::<usize>().unwrap()] = true;
                    }
                }
                set
            })
            .collect();
        Oracle {
            sets,
            dom_star: fields[2].starts_with('*'),
            dow_star: fields[4].starts_with('*'),
        }
    }

    fn day_ok(&self, days: i64) -> bool {
        let (_, m, d) = civil(days);
        if !self.sets[3][m as usize] {
            return false;
        }
        let dom = self.sets[2][d as usize];
        let dow = self.sets[4][weekday(days) as usize];
        if self.dom_star || self.dow_star {
            dom && dow
        } else {
            dom || dow
        }
    }

    /// First matching minute strictly after `unix_secs`, scanning minutes
    /// one by one and only skipping whole days that do not match.
    pub fn next(&self, unix_secs: i64) -> Option<i64> {
        let first = unix_secs.div_euclid(60) + 1;
        let mut minute = first;
        while minute - first < HORIZON_MINUTES {
            let days = minute.div_euclid(1440);
            if !self.day_ok(days) {
                minute = (days + 1) * 1440;
                continue;
            }
            let of_day = minute.rem_euclid(1440);
            if self.sets[1][(of_day / 60) as usize] && self.sets[0][(of_day % 60) as usize] {
                return Some(minute * 60);
            }
            minute += 1;
        }
        None
    }
}

pub fn random_field(rng: &mut StdRng, lo: u32, hi: u32) -> String {
    match rng.gen_range(0..10) {
        0..=3 => "*".into(),
        4 => format!("*/{}", rng.gen_range(2..=(hi - lo).max(2))),
        5..=7 => rng.gen_range(lo..=hi).to_string(),
        _ => {
            let mut v: Vec<u32> = (0..rng.gen_range(2..=4)).map(|_| rng.gen_range(lo..=hi)).collect();
            v.sort();
            v.dedup();
            v.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
        }
    }
}

pub fn random_spec(rng: &mut StdRng) -> String {
    let mut f = vec![
        random_field(rng, 0, 59),
        random_field(rng, 0, 23),
        random_field(rng, 1, 31),
        random_field(rng, 1, 12),
        random_field(rng, 0, 6),
    ];
    // sparse and leap-day specs that need long scans
    match rng.gen_range(0..20) {
        0 => {
            f[2] = "29".into();
            f[3] = "2".into();
        }
        1 => {
            f[2] = "31".into();
            f[3] = rng.gen_range(1..=12).to_string();
        }
        _ => {}
    }
    f.join(" ")
}

/// Compares `next_after` with the scan on `n` random (spec, start) pairs.
/// Returns how many specs never matched within the horizon.
pub fn agreement(n: usize, seed: u64) -> Result<usize, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let lo = Utc.with_ymd_and_hms(1999, 1, 1, 0, 0, 0).unwrap().timestamp();
    let hi = Utc.with_ymd_and_hms(2031, 1, 1, 0, 0, 0).unwrap().timestamp();
    let mut never = 0;
    for _ in 0..n {
        let spec = random_spec(&mut rng);
        let start = rng.gen_range(lo..hi);
        let expected = Oracle::new(&spec).next(start);
        let after = DateTime::from_timestamp(start, 0).unwrap();
        let got = match CronSpec::parse(&spec) {
            Ok(s) => match s.next_after(after) {
                Ok(t) => Some(t.timestamp()),
                Err(CronError::NoMatch(_)) => None,
                Err(e) => return Err(format!("{spec}: {e}")),
            },
            Err(CronError::Unsatisfiable(_)) => None,
            Err(e) => return Err(format!("{spec}: {e}")),
        };
        if got != expected {
            return Err(format!("spec {spec:?} after {after}: got {got:?}, scan says {expected:?}"));
        }
        never += usize::from(got.is_none());
    }
    Ok(never)
}
