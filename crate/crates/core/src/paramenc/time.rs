//! Timestamps as points on unit circles, one circle per calendar unit.

use std::f64::consts::TAU;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ParamError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Year,
    Month,
    Day,
    Hour,
    Minute,
    Second,
    Millisecond,
}

impl TimeUnit {
    pub const ALL: [TimeUnit; 7] = [
        TimeUnit::Year,
        TimeUnit::Month,
        TimeUnit::Day,
        TimeUnit::Hour,
        TimeUnit::Minute,
        TimeUnit::Second,
        TimeUnit::Millisecond,
    ];
}

/// Period of each unit. Years are not cyclic; they are folded modulo
/// `year_period`, and the year lane can be switched off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeUnits {
    pub year_period: u32,
    pub year_enabled: bool,
}

impl Default for TimeUnits {
    fn default() -> Self {
        Self {
            year_period: 10,
            year_enabled: true,
        }
    }
}

impl TimeUnits {
    pub fn max_t(&self, unit: TimeUnit) -> Result<u32, ParamError> {
        let m = match unit {
            TimeUnit::Year if !self.year_enabled => 0,
            TimeUnit::Year => self.year_period,
            TimeUnit::Month => 12,
            TimeUnit::Day => 31,
            TimeUnit::Hour => 24,
            TimeUnit::Minute | TimeUnit::Second => 60,
            TimeUnit::Millisecond => 1000,
        };
        if m < 2 {
            return Err(ParamError::UnknownUnit(unit));
        }
        Ok(m)
    }

    pub fn enabled(&self, unit: TimeUnit) -> bool {
        self.max_t(unit).is_ok()
    }
}

/// `(sin(2πt/max_t), cos(2πt/max_t))`, with `t` reduced modulo `max_t`.
pub fn encode_time(t: i64, unit: TimeUnit, units: &TimeUnits) -> Result<(f64, f64), ParamError> {
    let m = units.max_t(unit)? as i64;
    let angle = TAU * t.rem_euclid(m) as f64 / m as f64;
    Ok((angle.sin(), angle.cos()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimeError {
    /// Not a timestamp at all.
    Format,
    /// Timestamp-shaped, but a field is out of range.
    Range,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TimeValue {
    pub year: Option<i64>,
    pub month: Option<i64>,
    pub day: Option<i64>,
    pub hour: Option<i64>,
    pub minute: Option<i64>,
    pub second: Option<i64>,
    pub millisecond: Option<i64>,
    /// Fixed UTC offset in minutes.
    pub offset_minutes: i64,
}

static DATE_TIME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(\d{4})[-/](\d{2})[-/](\d{2})(?:[T ](\d{2}):(\d{2})(?::(\d{2})(?:[.,](\d{1,9}))?)?)?(Z|[+-]\d{2}:?\d{2})?$",
    )
    .expect("valid regex")
});

static CLOCK: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(\d{2}):(\d{2})(?::(\d{2})(?:[.,](\d{1,9}))?)?$").expect("valid regex")
});

/// True when the string has the shape of a timestamp, whether or not its
/// fields are in range.
pub fn looks_like_time(s: &str) -> bool {
    DATE_TIME.is_match(s) || CLOCK.is_match(s)
}

fn is_leap(y: i64) -> bool {
    (y % 4 == 0 && y % 100 != 0) || y % 400 == 0
}

fn days_in_month(y: i64, m: i64) -> i64 {
    match m {
        2 if is_leap(y) => 29,
        2 => 28,
        4 | 6 | 9 | 11 => 30,
        _ => 31,
    }
}

// Howard Hinnant's days_from_civil.
fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn millis_of(frac: &str) -> i64 {
    let mut digits: String = frac.chars().take(3).collect();
    while digits.len() < 3 {
        digits.push('0');
    }
    digits.parse().unwrap_or(0)
}

fn parse_offset(s: &str) -> Result<i64, TimeError> {
    if s == "Z" {
        return Ok(0);
    }
    let sign = if s.starts_with('-') { -1 } else { 1 };
    let digits: String = s[1..].chars().filter(|c| *c != ':').collect();
    let h: i64 = digits[..2].parse().map_err(|_| TimeError::Format)?;
    let m: i64 = digits[2..].parse().map_err(|_| TimeError::Format)?;
    if h > 14 || m > 59 {
        return Err(TimeError::Range);
    }
    Ok(sign * (h * 60 + m))
}

pub fn parse_time(s: &str) -> Result<TimeValue, TimeError> {
    let num = |c: Option<regex::Match>| c.map(|m| m.as_str().parse::<i64>().unwrap_or(i64::MAX));
    let mut v = TimeValue::default();
    if let Some(c) = DATE_TIME.captures(s) {
        v.year = num(c.get(1));
        v.month = num(c.get(2));
        v.day = num(c.get(3));
        v.hour = num(c.get(4));
        v.minute = num(c.get(5));
        v.second = num(c.get(6));
        v.millisecond = c.get(7).map(|m| millis_of(m.as_str()));
        if let Some(off) = c.get(8) {
            v.offset_minutes = parse_offset(off.as_str())?;
        }
    } else if let Some(c) = CLOCK.captures(s) {
        v.hour = num(c.get(1));
        v.minute = num(c.get(2));
        v.second = num(c.get(3));
        v.millisecond = c.get(4).map(|m| millis_of(m.as_str()));
    } else {
        return Err(TimeError::Format);
    }
    let in_range = |x: Option<i64>, lo: i64, hi: i64| x.is_none_or(|x| (lo..=hi).contains(&x));
    let day_max = match (v.year, v.month) {
        (Some(y), Some(m)) if (1..=12).contains(&m) => days_in_month(y, m),
        _ => 31,
    };
    let ok = in_range(v.month, 1, 12)
        && in_range(v.day, 1, day_max)
        && in_range(v.hour, 0, 23)
        && in_range(v.minute, 0, 59)
        && in_range(v.second, 0, 59);
    if !ok {
        return Err(TimeError::Range);
    }
    Ok(v)
}

impl TimeValue {
    pub fn get(&self, unit: TimeUnit) -> Option<i64> {
        match unit {
            TimeUnit::Year => self.year,
            TimeUnit::Month => self.month,
            TimeUnit::Day => self.day,
            TimeUnit::Hour => self.hour,
            TimeUnit::Minute => self.minute,
            TimeUnit::Second => self.second,
            TimeUnit::Millisecond => self.millisecond,
        }
    }

    pub fn units(&self) -> Vec<TimeUnit> {
        TimeUnit::ALL.into_iter().filter(|u| self.get(*u).is_some()).collect()
    }

    /// Milliseconds since the Unix epoch in UTC, when a date is present.
    pub fn instant_ms(&self) -> Option<i64> {
        let days = days_from_civil(self.year?, self.month?, self.day?);
        let secs = days * 86_400
            + self.hour.unwrap_or(0) * 3600
            + self.minute.unwrap_or(0) * 60
            + self.second.unwrap_or(0)
            - self.offset_minutes * 60;
        Some(secs * 1000 + self.millisecond.unwrap_or(0))
    }

    /// Concatenated circle coordinates for `layout`; missing units stay zero.
    pub fn encode(&self, layout: &[TimeUnit], units: &TimeUnits) -> Result<Vec<f64>, ParamError> {
        let mut out = Vec::with_capacity(2 * layout.len());
        for &u in layout {
            match self.get(u) {
                Some(t) => {
                    let (s, c) = encode_time(t, u, units)?;
                    out.extend([s, c]);
                }
                None => out.extend([0.0, 0.0]),
            }
        }
        Ok(out)
    }
}
