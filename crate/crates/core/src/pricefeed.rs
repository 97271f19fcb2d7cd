//! Hourly day-ahead price ingestion, gap repair, and level / daily-spread statistics.
//!
//! Input files carry a `timestamp,price_eur_mwh` header with ISO-8601 timestamps.
//! Timestamps with an offset are converted to UTC; naive timestamps are read as
//! UTC. Every row must sit on an hour boundary.
//!
//! Standard deviations are population deviations (divide by N) throughout.

use std::io::Read;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, TimeZone, Timelike, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest run of missing hours any gap policy will repair.
pub const MAX_FILLABLE_HOLE_HOURS: usize = 24;

/// Minimum number of hours in a series.
pub const MIN_SERIES_HOURS: usize = 24;

#[derive(Debug, Error)]
pub enum PriceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("expected header `timestamp,price_eur_mwh`, found `{0}`")]
    Header(String),
    #[error("line {line}: malformed row: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: non-numeric price `{value}`")]
    NonNumeric { line: u64, value: String },
    #[error("line {line}: price is not finite")]
    NonFinite { line: u64 },
    #[error("line {line}: timestamp {ts} is not hour-aligned")]
    NotHourAligned { line: u64, ts: String },
    #[error("line {line}: duplicate timestamp {ts}")]
    DuplicateTimestamp { line: u64, ts: String },
    #[error("line {line}: timestamp {ts} goes backwards")]
    NonMonotone { line: u64, ts: String },
    #[error("{hours} missing hour(s) after {after}; supply a gap policy")]
    MissingHours { after: String, hours: usize },
    #[error(
        "hole of {hours} hours after {after} exceeds the {MAX_FILLABLE_HOLE_HOURS} h repair limit"
    )]
    HoleTooLong { after: String, hours: usize },
    #[error("series has {0} hours; at least {MIN_SERIES_HOURS} are required")]
    TooShort(usize),
    #[error("series is empty")]
    Empty,
    #[error("no complete day in range")]
    NoCompleteDay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GapPolicy {
    #[default]
    Reject,
    LinearInterpolate,
    PreviousHour,
}

impl std::str::FromStr for GapPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reject" => Ok(GapPolicy::Reject),
            "interp" | "linear-interpolate" => Ok(GapPolicy::LinearInterpolate),
            "prev" | "previous-hour" => Ok(GapPolicy::PreviousHour),
            other => Err(format!("unknown gap policy `{other}` (reject|interp|prev)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawPoint {
    pub ts: DateTime<Utc>,
    pub price: f64,
    pub imputed: bool,
}

/// Parsed hourly prices that may still contain holes.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub zone: String,
    pub points: Vec<RawPoint>,
}

/// Gap-free hourly price track for one bidding zone.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    zone: String,
    start: DateTime<Utc>,
    prices: Vec<f64>,
    gap_flags: Vec<bool>,
}

impl PriceSeries {
    pub fn new(
        zone: impl Into<String>,
        start: DateTime<Utc>,
        prices: Vec<f64>,
    ) -> Result<Self, PriceError> {
        let n = prices.len();
        Self::with_flags(zone, start, prices, vec![false; n])
    }

    pub fn with_flags(
        zone: impl Into<String>,
        start: DateTime<Utc>,
        prices: Vec<f64>,
        gap_flags: Vec<bool>,
    ) -> Result<Self, PriceError> {
        if prices.len() < MIN_SERIES_HOURS {
            return Err(PriceError::TooShort(prices.len()));
        }
        if let Some(i) = prices.iter().position(|p| !p.is_finite()) {
            return Err(PriceError::NonFinite { line: i as u64 + 2 });
        }
        if start.minute() != 0 || start.second() != 0 || start.nanosecond() != 0 {
            return Err(PriceError::NotHourAligned {
                line: 2,
                ts: start.to_rfc3339(),
            });
        }
        assert_eq!(prices.len(), gap_flags.len(), "gap flags must match prices");
        Ok(Self {
            zone: zone.into(),
            start,
            prices,
            gap_flags,
        })
    }

    pub fn zone(&self) -> &str {
        &self.zone
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn gap_flags(&self) -> &[bool] {
        &self.gap_flags
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::hours(i as i64)
    }

    pub fn imputed_hours(&self) -> usize {
        self.gap_flags.iter().filter(|f| **f).count()
    }

    /// A copy with every price mapped through `f`.
    pub fn map_prices(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            zone: self.zone.clone(),
            start: self.start,
            prices: self.prices.iter().map(|p| f(*p)).collect(),
            gap_flags: self.gap_flags.clone(),
        }
    }
}

impl From<&PriceSeries> for RawSeries {
    fn from(s: &PriceSeries) -> Self {
        RawSeries {
            zone: s.zone.clone(),
            points: (0..s.len())
                .map(|i| RawPoint {
                    ts: s.timestamp(i),
                    price: s.prices[i],
                    imputed: s.gap_flags[i],
                })
                .collect(),
        }
    }
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(n) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&n));
        }
    }
    None
}

/// Parses a price CSV without repairing holes. Timestamps must be hour-aligned
/// and strictly increasing.
pub fn parse_raw<R: Read>(stream: R, zone: &str) -> Result<RawSeries, PriceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(stream);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| PriceError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?,
        None => return Err(PriceError::Empty),
    };
    let cols: Vec<&str> = header
        .iter()
        .map(|c| c.trim_start_matches('\u{feff}'))
        .collect();
    if cols != ["timestamp", "price_eur_mwh"] {
        return Err(PriceError::Header(cols.join(",")));
    }

    let mut points: Vec<RawPoint> = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| PriceError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 2 {
            return Err(PriceError::Malformed {
                line,
                reason: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| PriceError::Malformed {
            line,
            reason: format!("bad timestamp `{}`", &rec[0]),
        })?;
        if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 {
            return Err(PriceError::NotHourAligned {
                line,
                ts: rec[0].to_string(),
            });
        }
        let price: f64 = rec[1].parse().map_err(|_| PriceError::NonNumeric {
            line,
            value: rec[1].to_string(),
        })?;
        if !price.is_finite() {
            return Err(PriceError::NonFinite { line });
        }
        if let Some(last) = points.last() {
            if ts == last.ts || (ts < last.ts && points.binary_search_by(|p| p.ts.cmp(&ts)).is_ok())
            {
                return Err(PriceError::DuplicateTimestamp {
                    line,
                    ts: rec[0].to_string(),
                });
            }
            if ts < last.ts {
                return Err(PriceError::NonMonotone {
                    line,
                    ts: rec[0].to_string(),
                });
            }
        }
        points.push(RawPoint {
            ts,
            price,
            imputed: false,
        });
    }
    if points.is_empty() {
        return Err(PriceError::Empty);
    }
    Ok(RawSeries {
        zone: zone.to_string(),
        points,
    })
}

/// Parses a price CSV, rejecting any missing hour.
pub fn parse_price_csv<R: Read>(stream: R, zone: &str) -> Result<PriceSeries, PriceError> {
    parse_price_csv_with(stream, zone, GapPolicy::Reject)
}

pub fn parse_price_csv_with<R: Read>(
    stream: R,
    zone: &str,
    policy: GapPolicy,
) -> Result<PriceSeries, PriceError> {
    fill_gaps(&parse_raw(stream, zone)?, policy)
}

/// Resolves holes in an hourly series. Imputed hours are flagged; flags already
/// present on the input are kept, so the operation is idempotent.
pub fn fill_gaps(series: &RawSeries, policy: GapPolicy) -> Result<PriceSeries, PriceError> {
    let pts = &series.points;
    let first = pts.first().ok_or(PriceError::Empty)?;
    let mut prices = Vec::with_capacity(pts.len());
    let mut flags = Vec::with_capacity(pts.len());
    prices.push(first.price);
    flags.push(first.imputed);

    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let step = (b.ts - a.ts).num_hours();
        let missing = (step - 1).max(0) as usize;
        if missing > 0 {
            let after = a.ts.to_rfc3339();
            if missing > MAX_FILLABLE_HOLE_HOURS {
                return Err(PriceError::HoleTooLong {
                    after,
                    hours: missing,
                });
            }
            for k in 1..=missing {
                let v = match policy {
                    GapPolicy::Reject => {
                        return Err(PriceError::MissingHours {
                            after,
                            hours: missing,
                        })
                    }
                    GapPolicy::LinearInterpolate => {
                        let f = k as f64 / (missing + 1) as f64;
                        a.price + f * (b.price - a.price)
                    }
                    GapPolicy::PreviousHour => a.price,
                };
                prices.push(v);
                flags.push(true);
            }
        }
        prices.push(b.price);
        flags.push(b.imputed);
    }
    PriceSeries::with_flags(series.zone.clone(), first.ts, prices, flags)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceStats {
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub mean_gap: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub days: usize,
}

fn summarize(xs: &[f64]) -> Option<(f64, f64, f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // keep min <= mean <= max under rounding
    Some((mean.clamp(min, max), var.sqrt(), min, max))
}

pub fn hourly_stats(series: &PriceSeries) -> Result<PriceStats, PriceError> {
    let (mean, std_dev, min, max) = summarize(series.prices()).ok_or(PriceError::Empty)?;
    Ok(PriceStats {
        mean,
        std_dev,
        min,
        max,
    })
}

/// Local-day boundaries for daily statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DayBoundary {
    #[default]
    Utc,
    Zone(Tz),
}

impl std::str::FromStr for DayBoundary {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("utc") {
            return Ok(DayBoundary::Utc);
        }
        s.parse::<Tz>()
            .map(DayBoundary::Zone)
            .map_err(|e| e.to_string())
    }
}

impl DayBoundary {
    fn local_date(&self, ts: DateTime<Utc>) -> NaiveDate {
        match self {
            DayBoundary::Utc => ts.date_naive(),
            DayBoundary::Zone(tz) => ts.with_timezone(tz).date_naive(),
        }
    }

    /// Number of hours in the local civil day (23, 24 or 25 across DST shifts).
    fn hours_in_day(&self, date: NaiveDate) -> i64 {
        match self {
            DayBoundary::Utc => 24,
            DayBoundary::Zone(tz) => {
                let start = local_midnight(tz, date);
                let end = local_midnight(tz, date.succ_opt().expect("date in range"));
                (end - start).num_hours()
            }
        }
    }
}

fn local_midnight(tz: &Tz, date: NaiveDate) -> DateTime<Utc> {
    // a handful of zones skip midnight on DST days; take the first valid hour
    (0..3)
        .find_map(|h| {
            tz.from_local_datetime(&date.and_hms_opt(h, 0, 0)?)
                .earliest()
        })
        .expect("local day has a valid early hour")
        .with_timezone(&Utc)
}

/// Per-day (max - min) price spread for every complete local day.
pub fn daily_gaps(series: &PriceSeries, days: DayBoundary) -> Vec<(NaiveDate, f64)> {
    let mut out = Vec::new();
    let mut i = 0;
    let n = series.len();
    while i < n {
        let date = days.local_date(series.timestamp(i));
        let mut j = i;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        while j < n && days.local_date(series.timestamp(j)) == date {
            lo = lo.min(series.prices[j]);
            hi = hi.max(series.prices[j]);
            j += 1;
        }
        if (j - i) as i64 == days.hours_in_day(date) {
            out.push((date, hi - lo));
        }
        i = j;
    }
    out
}

pub fn daily_gap_stats(series: &PriceSeries, days: DayBoundary) -> Result<GapStats, PriceError> {
    let gaps: Vec<f64> = daily_gaps(series, days)
        .into_iter()
        .map(|(_, g)| g)
        .collect();
    let (mean_gap, std_dev, min, max) = summarize(&gaps).ok_or(PriceError::NoCompleteDay)?;
    Ok(GapStats {
        mean_gap,
        std_dev,
        min,
        max,
        days: gaps.len(),
    })
}
