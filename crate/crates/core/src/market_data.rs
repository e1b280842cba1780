//! OHLCV ingestion, cleaning, session filtering, resampling and log returns.
//!
//! Timestamps are exchange-local and mark the END of each interval. A trading
//! day is the calendar date of the end timestamp.

use std::io::{Read, Write};

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), TIMESTAMP_FORMAT).ok()
}

pub fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

pub fn trading_day(ts: NaiveDateTime) -> NaiveDate {
    ts.date()
}

/// Bar size in minutes, one of 1, 5, 10 or 15.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Frequency {
    minutes: u32,
}

impl Frequency {
    pub const ONE_MINUTE: Frequency = Frequency { minutes: 1 };
    pub const FIVE_MINUTES: Frequency = Frequency { minutes: 5 };
    pub const TEN_MINUTES: Frequency = Frequency { minutes: 10 };
    pub const FIFTEEN_MINUTES: Frequency = Frequency { minutes: 15 };

    pub fn new(minutes: u32) -> Result<Self> {
        match minutes {
            1 | 5 | 10 | 15 => Ok(Frequency { minutes }),
            other => Err(Error::Parameter(format!(
                "unsupported bar frequency {other} minutes (expected 1, 5, 10 or 15)"
            ))),
        }
    }

    pub fn minutes(self) -> u32 {
        self.minutes
    }

    pub fn duration(self) -> Duration {
        Duration::minutes(self.minutes as i64)
    }

    /// Intervals per trading day on the 6.5-hour annualization basis.
    pub fn intervals_per_day(self) -> u32 {
        390 / self.minutes
    }

    pub fn label(self) -> String {
        format!("{}min", self.minutes)
    }

    /// Whether `ts` falls exactly on this frequency's grid.
    pub fn is_aligned(self, ts: NaiveDateTime) -> bool {
        ts.second() == 0 && ts.nanosecond() == 0 && ts.minute().is_multiple_of(self.minutes)
    }
}

impl TryFrom<u32> for Frequency {
    type Error = Error;
    fn try_from(m: u32) -> Result<Self> {
        Frequency::new(m)
    }
}

impl From<Frequency> for u32 {
    fn from(f: Frequency) -> u32 {
        f.minutes
    }
}

/// Clock-time window `(start, end]` applied to bar end timestamps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionWindow {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl SessionWindow {
    pub fn new(start: NaiveTime, end: NaiveTime) -> Result<Self> {
        if start >= end {
            return Err(Error::Parameter(format!(
                "session start {start} must precede end {end}"
            )));
        }
        Ok(SessionWindow { start, end })
    }

    /// 04:00–20:00 exchange-local, pre- and post-market included.
    pub fn extended_hours() -> Self {
        SessionWindow {
            start: NaiveTime::from_hms_opt(4, 0, 0).unwrap(),
            end: NaiveTime::from_hms_opt(20, 0, 0).unwrap(),
        }
    }

    pub fn contains(&self, ts: NaiveDateTime) -> bool {
        let t = ts.time();
        t > self.start && t <= self.end
    }
}

impl Default for SessionWindow {
    fn default() -> Self {
        Self::extended_hours()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub end: NaiveDateTime,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    pub fn is_valid(&self) -> bool {
        let finite = [self.open, self.high, self.low, self.close, self.volume]
            .iter()
            .all(|v| v.is_finite());
        finite
            && self.open > 0.0
            && self.high > 0.0
            && self.low > 0.0
            && self.close > 0.0
            && self.volume >= 0.0
            && self.low <= self.open.min(self.close)
            && self.high >= self.open.max(self.close)
    }
}

/// A raw, possibly incomplete bar as read from a data vendor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarRecord {
    pub timestamp: NaiveDateTime,
    pub open: Option<f64>,
    pub high: Option<f64>,
    pub low: Option<f64>,
    pub close: Option<f64>,
    pub volume: Option<f64>,
}

impl From<&Bar> for BarRecord {
    fn from(b: &Bar) -> Self {
        BarRecord {
            timestamp: b.end,
            open: Some(b.open),
            high: Some(b.high),
            low: Some(b.low),
            close: Some(b.close),
            volume: Some(b.volume),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarSeries {
    pub bars: Vec<Bar>,
    pub frequency: Frequency,
    /// `None` until a session filter has been applied.
    pub session: Option<SessionWindow>,
}

impl BarSeries {
    pub fn new(bars: Vec<Bar>, frequency: Frequency) -> Self {
        BarSeries {
            bars,
            frequency,
            session: None,
        }
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn timestamps(&self) -> Vec<NaiveDateTime> {
        self.bars.iter().map(|b| b.end).collect()
    }

    pub fn position(&self, ts: NaiveDateTime) -> Option<usize> {
        self.bars.binary_search_by_key(&ts, |b| b.end).ok()
    }

    /// Bars with end timestamp in `[from, to]`.
    pub fn slice_between(&self, from: NaiveDateTime, to: NaiveDateTime) -> BarSeries {
        let lo = self.bars.partition_point(|b| b.end < from);
        let hi = self.bars.partition_point(|b| b.end <= to);
        BarSeries {
            bars: self.bars[lo..hi.max(lo)].to_vec(),
            frequency: self.frequency,
            session: self.session,
        }
    }

    pub fn to_records(&self) -> Vec<BarRecord> {
        self.bars.iter().map(BarRecord::from).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub duplicates_dropped: usize,
    pub invalid_dropped: usize,
    pub forward_filled: usize,
}

fn parse_optional(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw.parse().map_err(|_| Error::Ingest {
        row,
        message: format!("column `{column}`: cannot parse `{raw}` as a number"),
    })?;
    Ok(v.is_finite().then_some(v))
}

/// Reads `timestamp,open,high,low,close,volume` rows. Empty numeric cells
/// become missing values; malformed ones are ingest errors.
pub fn read_bar_records<R: Read>(reader: R) -> Result<Vec<BarRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Ingest {
            row: 0,
            message: format!("missing column `{name}`"),
        })
    };
    let idx = [
        col("timestamp")?,
        col("open")?,
        col("high")?,
        col("low")?,
        col("close")?,
        col("volume")?,
    ];
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let timestamp = parse_timestamp(field(0)).ok_or_else(|| Error::Ingest {
            row,
            message: format!("unparseable timestamp `{}`", field(0)),
        })?;
        out.push(BarRecord {
            timestamp,
            open: parse_optional(field(1), row, "open")?,
            high: parse_optional(field(2), row, "high")?,
            low: parse_optional(field(3), row, "low")?,
            close: parse_optional(field(4), row, "close")?,
            volume: parse_optional(field(5), row, "volume")?,
        });
    }
    Ok(out)
}

/// Sorts (stable) and cleans raw records into a validated series.
pub fn parse_bars(mut records: Vec<BarRecord>, frequency: Frequency) -> Result<(BarSeries, CleanReport)> {
    if records.is_empty() {
        return Err(Error::EmptySeries("no bar rows"));
    }
    records.sort_by_key(|r| r.timestamp);
    Ok(clean_bars(&records, frequency))
}

pub fn read_bars_csv<R: Read>(reader: R, frequency: Frequency) -> Result<(BarSeries, CleanReport)> {
    parse_bars(read_bar_records(reader)?, frequency)
}

/// Removes duplicates (first wins), drops bars with no usable price data or
/// non-positive prices, and forward-fills isolated missing fields from the
/// previous bar of the same trading day.
///
/// Imputation: missing close and volume take the previous bar's values;
/// missing open takes the previous close (or the bar's own close when it is
/// the first of the day); missing high/low are bounded by open and close.
pub fn clean_bars(records: &[BarRecord], frequency: Frequency) -> (BarSeries, CleanReport) {
    let mut report = CleanReport::default();
    let mut bars: Vec<Bar> = Vec::with_capacity(records.len());
    let mut last_ts: Option<NaiveDateTime> = None;

    for rec in records {
        if last_ts == Some(rec.timestamp) {
            report.duplicates_dropped += 1;
            continue;
        }
        last_ts = Some(rec.timestamp);

        let prices = [rec.open, rec.high, rec.low, rec.close];
        let no_prices = prices.iter().all(Option::is_none);
        let non_positive = prices.iter().flatten().any(|p| *p <= 0.0);
        let negative_volume = rec.volume.is_some_and(|v| v < 0.0);
        if no_prices || non_positive || negative_volume || !frequency.is_aligned(rec.timestamp) {
            report.invalid_dropped += 1;
            continue;
        }

        let prev = bars
            .last()
            .filter(|p| trading_day(p.end) == trading_day(rec.timestamp))
            .copied();
        let mut filled = false;
        let close = match (rec.close, prev) {
            (Some(c), _) => c,
            (None, Some(p)) => {
                filled = true;
                p.close
            }
            (None, None) => {
                report.invalid_dropped += 1;
                continue;
            }
        };
        let volume = match (rec.volume, prev) {
            (Some(v), _) => v,
            (None, Some(p)) => {
                filled = true;
                p.volume
            }
            (None, None) => {
                report.invalid_dropped += 1;
                continue;
            }
        };
        let open = rec.open.unwrap_or_else(|| {
            filled = true;
            prev.map_or(close, |p| p.close)
        });
        let high = rec.high.unwrap_or_else(|| {
            filled = true;
            open.max(close)
        });
        let low = rec.low.unwrap_or_else(|| {
            filled = true;
            open.min(close)
        });
        let bar = Bar {
            end: rec.timestamp,
            open,
            high,
            low,
            close,
            volume,
        };
        if !bar.is_valid() {
            report.invalid_dropped += 1;
            continue;
        }
        if filled {
            report.forward_filled += 1;
        }
        bars.push(bar);
    }
    (BarSeries::new(bars, frequency), report)
}

pub fn filter_session(series: &BarSeries, window: SessionWindow) -> BarSeries {
    BarSeries {
        bars: series
            .bars
            .iter()
            .filter(|b| window.contains(b.end))
            .copied()
            .collect(),
        frequency: series.frequency,
        session: Some(window),
    }
}

/// End of the right-closed `minutes`-wide bucket holding `ts`.
pub fn bucket_end(ts: NaiveDateTime, minutes: u32) -> NaiveDateTime {
    let secs = ts.time().num_seconds_from_midnight() as i64;
    let width = minutes as i64 * 60;
    let idx = (secs + width - 1) / width;
    ts.date().and_hms_opt(0, 0, 0).unwrap() + Duration::seconds(idx * width)
}

/// Aggregates into right-closed target buckets that never span two trading
/// days. Buckets whose end falls outside the series' session are dropped.
pub fn resample(series: &BarSeries, target: Frequency) -> Result<BarSeries> {
    let src = series.frequency.minutes();
    if target.minutes() < src || !target.minutes().is_multiple_of(src) {
        return Err(Error::Parameter(format!(
            "target frequency {} min is not a multiple of source {} min",
            target.minutes(),
            src
        )));
    }
    let mut out: Vec<Bar> = Vec::new();
    let mut current: Option<(NaiveDate, Bar)> = None;
    for b in &series.bars {
        let day = trading_day(b.end);
        let end = bucket_end(b.end, target.minutes());
        match current.as_mut() {
            Some((d, acc)) if *d == day && acc.end == end => {
                acc.high = acc.high.max(b.high);
                acc.low = acc.low.min(b.low);
                acc.close = b.close;
                acc.volume += b.volume;
            }
            _ => {
                if let Some((_, done)) = current.take() {
                    out.push(done);
                }
                current = Some((day, Bar { end, ..*b }));
            }
        }
    }
    if let Some((_, done)) = current {
        out.push(done);
    }
    if let Some(window) = series.session {
        out.retain(|b| window.contains(b.end));
    }
    Ok(BarSeries {
        bars: out,
        frequency: target,
        session: series.session,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnPoint {
    pub timestamp: NaiveDateTime,
    pub value: f64,
    /// First emitted return of its trading day (its predecessor in the
    /// series, if any, belongs to an earlier day).
    pub day_start: bool,
    /// Index of the bar this return ends at.
    pub bar_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub points: Vec<ReturnPoint>,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// Builds a series from bare values, starting a new day wherever `day_starts` is true.
    pub fn from_values(start: NaiveDateTime, step: Duration, values: &[f64], day_starts: &[bool]) -> Self {
        let points = values
            .iter()
            .enumerate()
            .map(|(i, &value)| ReturnPoint {
                timestamp: start + step * i as i32,
                value,
                day_start: i == 0 || day_starts.get(i).copied().unwrap_or(false),
                bar_index: i + 1,
            })
            .collect();
        ReturnSeries { points }
    }
}

/// Close-to-close log returns; the first bar of each day yields no return.
pub fn log_returns(series: &BarSeries) -> Result<ReturnSeries> {
    if series.len() < 2 {
        return Err(Error::InsufficientData {
            what: "log returns",
            needed: 2,
            got: series.len(),
        });
    }
    let mut points = Vec::with_capacity(series.len());
    let mut last_day: Option<NaiveDate> = None;
    for (i, pair) in series.bars.windows(2).enumerate() {
        let (prev, cur) = (&pair[0], &pair[1]);
        let day = trading_day(cur.end);
        if trading_day(prev.end) != day {
            continue;
        }
        points.push(ReturnPoint {
            timestamp: cur.end,
            value: cur.close.ln() - prev.close.ln(),
            day_start: last_day != Some(day),
            bar_index: i + 1,
        });
        last_day = Some(day);
    }
    Ok(ReturnSeries { points })
}

pub fn write_bars_csv<W: Write>(writer: W, series: &BarSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "open", "high", "low", "close", "volume"])?;
    for b in &series.bars {
        w.write_record([
            format_timestamp(b.end),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
            b.volume.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn bar(t: &str, close: f64, volume: f64) -> Bar {
        Bar {
            end: ts(t),
            open: close,
            high: close,
            low: close,
            close,
            volume,
        }
    }

    fn rec(t: &str, close: Option<f64>, volume: Option<f64>) -> BarRecord {
        BarRecord {
            timestamp: ts(t),
            open: close,
            high: close,
            low: close,
            close,
            volume,
        }
    }

    #[test]
    fn frequency_validation() {
        assert!(Frequency::new(3).is_err());
        assert_eq!(Frequency::new(5).unwrap().intervals_per_day(), 78);
        assert_eq!(Frequency::ONE_MINUTE.intervals_per_day(), 390);
        assert_eq!(Frequency::TEN_MINUTES.intervals_per_day(), 39);
        assert_eq!(Frequency::FIFTEEN_MINUTES.intervals_per_day(), 26);
    }

    #[test]
    fn parse_sorts_and_keeps_valid_rows() {
        let csv = "timestamp,open,high,low,close,volume\n\
                   2024-01-02T10:10:00,1,1,1,1,3\n\
                   2024-01-02T10:00:00,1,1,1,1,1\n\
                   2024-01-02T10:05:00,1,1,1,1,2\n";
        let (s, report) = read_bars_csv(csv.as_bytes(), Frequency::FIVE_MINUTES).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(
            s.bars.iter().map(|b| b.volume).collect::<Vec<_>>(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(report, CleanReport::default());
    }

    #[test]
    fn parse_reports_bad_timestamp_row() {
        let csv = "timestamp,open,high,low,close,volume\n\
                   2024-01-02T10:00:00,1,1,1,1,1\n\
                   yesterday,1,1,1,1,1\n";
        match read_bars_csv(csv.as_bytes(), Frequency::FIVE_MINUTES) {
            Err(Error::Ingest { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_empty_is_error() {
        let csv = "timestamp,open,high,low,close,volume\n";
        assert!(matches!(
            read_bars_csv(csv.as_bytes(), Frequency::FIVE_MINUTES),
            Err(Error::EmptySeries(_))
        ));
    }

    #[test]
    fn zero_close_dropped_and_counted() {
        let recs = vec![
            rec("2024-01-02T10:00:00", Some(1.0), Some(1.0)),
            BarRecord {
                close: Some(0.0),
                ..rec("2024-01-02T10:05:00", Some(1.0), Some(1.0))
            },
        ];
        let (s, report) = parse_bars(recs, Frequency::FIVE_MINUTES).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(report.invalid_dropped, 1);
    }

    #[test]
    fn duplicates_keep_first() {
        let recs = vec![
            rec("2024-01-02T10:00:00", Some(1.0), Some(7.0)),
            rec("2024-01-02T10:00:00", Some(2.0), Some(9.0)),
        ];
        let (s, report) = clean_bars(&recs, Frequency::FIVE_MINUTES);
        assert_eq!(s.len(), 1);
        assert_eq!(s.bars[0].volume, 7.0);
        assert_eq!(report.duplicates_dropped, 1);
    }

    #[test]
    fn missing_volume_forward_filled_within_day() {
        let recs = vec![
            rec("2024-01-02T10:00:00", Some(1.0), Some(42.0)),
            rec("2024-01-02T10:05:00", Some(1.1), None),
        ];
        let (s, report) = clean_bars(&recs, Frequency::FIVE_MINUTES);
        assert_eq!(s.bars[1].volume, 42.0);
        assert_eq!(report.forward_filled, 1);
    }

    #[test]
    fn missing_close_at_day_open_dropped() {
        let recs = vec![
            rec("2024-01-02T19:55:00", Some(1.0), Some(1.0)),
            BarRecord {
                close: None,
                ..rec("2024-01-03T04:00:00", Some(1.0), Some(1.0))
            },
        ];
        let (s, report) = clean_bars(&recs, Frequency::FIVE_MINUTES);
        assert_eq!(s.len(), 1);
        assert_eq!(report.invalid_dropped, 1);
    }

    #[test]
    fn session_boundaries() {
        let s = BarSeries::new(
            vec![
                bar("2024-01-02T03:59:00", 1.0, 1.0),
                bar("2024-01-02T04:00:00", 1.0, 1.0),
                bar("2024-01-02T04:01:00", 1.0, 1.0),
                bar("2024-01-02T20:00:00", 1.0, 1.0),
                bar("2024-01-02T20:01:00", 1.0, 1.0),
            ],
            Frequency::ONE_MINUTE,
        );
        let f = filter_session(&s, SessionWindow::extended_hours());
        let kept: Vec<_> = f.bars.iter().map(|b| b.end.time().to_string()).collect();
        assert_eq!(kept, vec!["04:01:00", "20:00:00"]);
    }

    #[test]
    fn resample_sums_volume() {
        let bars = (1..=5)
            .map(|i| bar(&format!("2024-01-02T10:0{i}:00"), 100.0 + i as f64, i as f64))
            .collect();
        let s = BarSeries::new(bars, Frequency::ONE_MINUTE);
        let r = resample(&s, Frequency::FIVE_MINUTES).unwrap();
        assert_eq!(r.len(), 1);
        let b = r.bars[0];
        assert_eq!(b.volume, 15.0);
        assert_eq!(b.open, 101.0);
        assert_eq!(b.close, 105.0);
        assert_eq!(b.high, 105.0);
        assert_eq!(b.low, 101.0);
        assert_eq!(b.end, ts("2024-01-02T10:05:00"));
    }

    #[test]
    fn resample_identity() {
        let s = BarSeries::new(vec![bar("2024-01-02T10:05:00", 3.0, 2.0)], Frequency::FIVE_MINUTES);
        let r = resample(&s, Frequency::FIVE_MINUTES).unwrap();
        assert_eq!(r.bars, s.bars);
    }

    #[test]
    fn resample_rejects_non_multiple() {
        let s = BarSeries::new(vec![bar("2024-01-02T10:10:00", 3.0, 2.0)], Frequency::TEN_MINUTES);
        assert!(resample(&s, Frequency::FIFTEEN_MINUTES).is_err());
        assert!(resample(&s, Frequency::FIVE_MINUTES).is_err());
    }

    #[test]
    fn resample_session_edge() {
        // 19:58, 19:59, 20:00 fall in the (19:55, 20:00] bucket; 20:01 and
        // 20:02 form the (20:00, 20:05] bucket, which ends outside the session.
        let bars = ["19:58", "19:59", "20:00", "20:01", "20:02"]
            .iter()
            .enumerate()
            .map(|(i, t)| bar(&format!("2024-01-02T{t}:00"), 100.0 + i as f64, 1.0))
            .collect();
        let mut s = BarSeries::new(bars, Frequency::ONE_MINUTE);
        s.session = Some(SessionWindow::extended_hours());
        let r = resample(&s, Frequency::FIVE_MINUTES).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.bars[0].end, ts("2024-01-02T20:00:00"));
        assert_eq!(r.bars[0].volume, 3.0);
        assert_eq!(r.bars[0].close, 102.0);
    }

    #[test]
    fn resample_never_crosses_days() {
        let s = BarSeries::new(
            vec![
                bar("2024-01-02T19:59:00", 1.0, 1.0),
                bar("2024-01-03T04:01:00", 2.0, 1.0),
            ],
            Frequency::ONE_MINUTE,
        );
        let r = resample(&s, Frequency::FIVE_MINUTES).unwrap();
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn log_return_cases() {
        let s = BarSeries::new(
            vec![bar("2024-01-02T10:00:00", 100.0, 1.0), bar("2024-01-02T10:05:00", 100.0, 1.0)],
            Frequency::FIVE_MINUTES,
        );
        assert_eq!(log_returns(&s).unwrap().points[0].value, 0.0);

        let s = BarSeries::new(
            vec![
                bar("2024-01-02T10:00:00", 100.0, 1.0),
                bar("2024-01-02T10:05:00", 100.0 * 0.01f64.exp(), 1.0),
            ],
            Frequency::FIVE_MINUTES,
        );
        assert!((log_returns(&s).unwrap().points[0].value - 0.01).abs() < 1e-15);
    }

    #[test]
    fn overnight_return_excluded() {
        let s = BarSeries::new(
            vec![
                bar("2024-01-02T19:55:00", 99.0, 1.0),
                bar("2024-01-02T20:00:00", 100.0, 1.0),
                bar("2024-01-03T04:05:00", 102.0, 1.0),
                bar("2024-01-03T04:10:00", 103.0, 1.0),
            ],
            Frequency::FIVE_MINUTES,
        );
        let r = log_returns(&s).unwrap();
        assert_eq!(r.len(), s.len() - 2);
        let last = r.points.last().unwrap();
        assert!((last.value - (103.0f64 / 102.0).ln()).abs() < 1e-15);
        assert!(last.day_start);
        assert!(r.points[0].day_start);
    }

    #[test]
    fn log_returns_need_two_bars() {
        let s = BarSeries::new(vec![bar("2024-01-02T10:00:00", 1.0, 1.0)], Frequency::FIVE_MINUTES);
        assert!(matches!(log_returns(&s), Err(Error::InsufficientData { .. })));
    }

    fn arb_records() -> impl Strategy<Value = Vec<BarRecord>> {
        let base = ts("2024-01-02T04:00:00");
        prop::collection::vec(
            (
                0i64..400,
                prop::option::weighted(0.9, 0.5f64..200.0),
                prop::option::weighted(0.9, 0.0f64..1e5),
                prop::bool::weighted(0.05),
            ),
            1..60,
        )
        .prop_map(move |rows| {
            let mut v: Vec<BarRecord> = rows
                .into_iter()
                .map(|(slot, close, volume, zero)| BarRecord {
                    timestamp: base + Duration::minutes(slot * 5),
                    open: close.map(|c| c * 1.001),
                    high: close.map(|c| c * 1.01),
                    low: close.map(|c| if zero { 0.0 } else { c * 0.99 }),
                    close,
                    volume,
                })
                .collect();
            v.sort_by_key(|r| r.timestamp);
            v
        })
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(recs in arb_records()) {
            let (once, _) = clean_bars(&recs, Frequency::FIVE_MINUTES);
            let (twice, report) = clean_bars(&once.to_records(), Frequency::FIVE_MINUTES);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(report, CleanReport::default());
        }

        #[test]
        fn returns_reconstruct_prices(recs in arb_records()) {
            let (s, _) = clean_bars(&recs, Frequency::FIVE_MINUTES);
            prop_assume!(s.len() >= 2);
            let r = log_returns(&s).unwrap();
            for p in &r.points {
                let prev = &s.bars[p.bar_index - 1];
                let cur = &s.bars[p.bar_index];
                prop_assert_eq!(trading_day(prev.end), trading_day(cur.end));
                let rebuilt = p.value.exp() * prev.close;
                prop_assert!(((rebuilt - cur.close) / cur.close).abs() < 1e-12);
            }
        }

        #[test]
        fn resample_conserves_volume(recs in arb_records()) {
            let (s, _) = clean_bars(&recs, Frequency::FIVE_MINUTES);
            let r = resample(&s, Frequency::FIFTEEN_MINUTES).unwrap();
            let src: f64 = s.bars.iter().map(|b| b.volume).sum();
            let dst: f64 = r.bars.iter().map(|b| b.volume).sum();
            prop_assert!((src - dst).abs() <= 1e-9 * src.max(1.0));
        }
    }
}
