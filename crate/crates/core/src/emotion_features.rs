//! Interval-level emotion aggregation, predictor assembly and train-only
//! z-scaling.

use std::io::{Read, Write};

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::VolatilitySeries;
use crate::market_data::{format_timestamp, parse_timestamp, trading_day, BarSeries, ReturnSeries};

pub const EMOTIONS: [&str; 7] = [
    "anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise",
];

/// Predictor columns, in matrix order.
pub const FEATURE_NAMES: [&str; 12] = [
    "return",
    "log_volume",
    "volatility",
    "anger",
    "disgust",
    "fear",
    "joy",
    "neutral",
    "sadness",
    "surprise",
    "n_tweets",
    "no_tweet",
];

pub const NO_TWEET_COLUMN: usize = 11;

pub fn feature_schema() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TweetEmotion {
    pub timestamp: NaiveDateTime,
    pub scores: [f64; 7],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionInterval {
    pub end: NaiveDateTime,
    pub means: [f64; 7],
    pub count: usize,
    pub no_tweet: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationReport {
    pub tweets_used: usize,
    pub tweets_outside_grid: usize,
}

/// Averages tweet scores over right-closed intervals `(end - width, end]`.
///
/// Empty intervals get a zero vector and the no-tweet flag. With
/// `forward_fill` set, an empty interval instead repeats the previous
/// interval's means when both fall on the same trading day (the flag and the
/// zero count are kept).
pub fn aggregate_emotions(
    tweets: &[TweetEmotion],
    grid: &[NaiveDateTime],
    width: Duration,
    forward_fill: bool,
) -> (Vec<EmotionInterval>, AggregationReport) {
    let mut sorted: Vec<&TweetEmotion> = tweets.iter().collect();
    sorted.sort_by_key(|t| t.timestamp);

    let n = grid.len();
    let mut sums = vec![[0.0f64; 7]; n];
    let mut lo = vec![[f64::INFINITY; 7]; n];
    let mut hi = vec![[f64::NEG_INFINITY; 7]; n];
    let mut counts = vec![0usize; n];
    let mut report = AggregationReport::default();

    for t in sorted {
        let idx = grid.partition_point(|e| *e < t.timestamp);
        if idx == n || t.timestamp <= grid[idx] - width {
            report.tweets_outside_grid += 1;
            continue;
        }
        report.tweets_used += 1;
        counts[idx] += 1;
        for k in 0..7 {
            sums[idx][k] += t.scores[k];
            lo[idx][k] = lo[idx][k].min(t.scores[k]);
            hi[idx][k] = hi[idx][k].max(t.scores[k]);
        }
    }

    let mut out: Vec<EmotionInterval> = Vec::with_capacity(n);
    for i in 0..n {
        let count = counts[i];
        let means = if count > 0 {
            let mut m = [0.0; 7];
            for k in 0..7 {
                // clamp guards the last-ulp drift of the division
                m[k] = (sums[i][k] / count as f64).clamp(lo[i][k], hi[i][k]);
            }
            m
        } else if forward_fill {
            out.last()
                .filter(|p| trading_day(p.end) == trading_day(grid[i]))
                .map_or([0.0; 7], |p| p.means)
        } else {
            [0.0; 7]
        };
        out.push(EmotionInterval {
            end: grid[i],
            means,
            count,
            no_tweet: count == 0,
        });
    }
    (out, report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub timestamp: NaiveDateTime,
    pub ret: f64,
    pub log_volume: f64,
    pub sigma: f64,
    pub emotions: [f64; 7],
    pub n_tweets: f64,
    pub no_tweet: bool,
}

impl IntervalRecord {
    pub fn features(&self) -> [f64; 12] {
        let e = &self.emotions;
        [
            self.ret,
            self.log_volume,
            self.sigma,
            e[0],
            e[1],
            e[2],
            e[3],
            e[4],
            e[5],
            e[6],
            self.n_tweets,
            if self.no_tweet { 1.0 } else { 0.0 },
        ]
    }
}

/// Joins returns, bars, volatility and emotions into one record per
/// timestamp where both the return and the volatility are defined.
pub fn assemble_features(
    returns: &ReturnSeries,
    bars: &BarSeries,
    vols: &VolatilitySeries,
    emotions: &[EmotionInterval],
) -> Result<Vec<IntervalRecord>> {
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(vols.points.len());
    for v in &vols.points {
        let ret = returns
            .points
            .binary_search_by_key(&v.timestamp, |p| p.timestamp)
            .ok()
            .map(|i| returns.points[i].value);
        let bar = bars.position(v.timestamp).map(|i| bars.bars[i]);
        let emo = emotions
            .binary_search_by_key(&v.timestamp, |e| e.end)
            .ok()
            .map(|i| emotions[i]);
        match (ret, bar, emo) {
            (Some(ret), Some(bar), Some(emo)) => out.push(IntervalRecord {
                timestamp: v.timestamp,
                ret,
                log_volume: bar.volume.max(1.0).ln(),
                sigma: v.sigma,
                emotions: emo.means,
                n_tweets: emo.count as f64,
                no_tweet: emo.no_tweet,
            }),
            _ => missing.push(v.timestamp),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Alignment {
            message: format!("{} volatility timestamps lack a return, bar or emotion interval", missing.len()),
            timestamps: missing,
        });
    }
    Ok(out)
}

/// Dense row-major feature matrix with named columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub schema: Vec<String>,
    n_rows: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(schema: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = schema.len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::Schema(format!(
                    "row {i} has {} values, schema has {d} columns",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(FeatureMatrix {
            schema,
            n_rows: rows.len(),
            data,
        })
    }

    pub fn from_flat(schema: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let d = schema.len();
        if d == 0 || !data.len().is_multiple_of(d) {
            return Err(Error::Schema(format!(
                "{} values do not fill rows of {d} columns",
                data.len()
            )));
        }
        Ok(FeatureMatrix {
            n_rows: data.len() / d,
            schema,
            data,
        })
    }

    /// Unnamed columns `x0, x1, ...`.
    pub fn anonymous(n_cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_flat((0..n_cols).map(|i| format!("x{i}")).collect(), data)
    }

    pub fn from_records(records: &[IntervalRecord]) -> Self {
        let data = records.iter().flat_map(|r| r.features()).collect();
        FeatureMatrix {
            schema: feature_schema(),
            n_rows: records.len(),
            data,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols() + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols());
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            schema: self.schema.clone(),
            n_rows: indices.len(),
            data,
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> FeatureMatrix {
        let d = self.n_cols();
        FeatureMatrix {
            schema: self.schema.clone(),
            n_rows: range.len(),
            data: self.data[range.start * d..range.end * d].to_vec(),
        }
    }

    pub fn check_schema(&self, expected: &[String]) -> Result<()> {
        if self.schema == expected {
            return Ok(());
        }
        let missing: Vec<_> = expected.iter().filter(|n| !self.schema.contains(n)).collect();
        let extra: Vec<_> = self.schema.iter().filter(|n| !expected.contains(n)).collect();
        Err(Error::Schema(format!(
            "missing features {missing:?}, unexpected features {extra:?}{}",
            if missing.is_empty() && extra.is_empty() {
                " (column order differs)"
            } else {
                ""
            }
        )))
    }
}

/// Per-column z-scaler. Only obtainable by fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    schema: Vec<String>,
    mean: Vec<f64>,
    std: Vec<f64>,
    passthrough: Vec<bool>,
}

const CONSTANT_GUARD: f64 = 1e-12;

impl FeatureScaler {
    /// Fits mean and population standard deviation on `matrix`; columns
    /// flagged in `passthrough` are left untouched by `transform`.
    pub fn fit(matrix: &FeatureMatrix, passthrough: &[bool]) -> Result<Self> {
        let n = matrix.n_rows();
        if n < 2 {
            return Err(Error::InsufficientData {
                what: "scaler fit",
                needed: 2,
                got: n,
            });
        }
        let d = matrix.n_cols();
        let mut mean = vec![0.0; d];
        for r in matrix.rows() {
            for j in 0..d {
                mean[j] += r[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in matrix.rows() {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s < CONSTANT_GUARD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        let mut passthrough = passthrough.to_vec();
        passthrough.resize(d, false);
        Ok(FeatureScaler {
            schema: matrix.schema.clone(),
            mean,
            std,
            passthrough,
        })
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn transform_matrix(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        m.check_schema(&self.schema)?;
        let d = self.schema.len();
        let data = m
            .as_slice()
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let j = k % d;
                if self.passthrough[j] {
                    x
                } else {
                    (x - self.mean[j]) / self.std[j]
                }
            })
            .collect();
        FeatureMatrix::from_flat(self.schema.clone(), data)
    }

    pub fn transform(&self, rows: &[IntervalRecord]) -> Result<FeatureMatrix> {
        self.transform_matrix(&FeatureMatrix::from_records(rows))
    }

    pub fn inverse_transform(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        m.check_schema(&self.schema)?;
        let d = self.schema.len();
        let data = m
            .as_slice()
            .iter()
            .enumerate()
            .map(|(k, &z)| {
                let j = k % d;
                if self.passthrough[j] {
                    z
                } else {
                    z * self.std[j] + self.mean[j]
                }
            })
            .collect();
        FeatureMatrix::from_flat(self.schema.clone(), data)
    }
}

/// Fits the predictor scaler on training records; the no-tweet indicator is passed through.
pub fn fit_scaler(rows: &[IntervalRecord]) -> Result<FeatureScaler> {
    let mut passthrough = vec![false; FEATURE_NAMES.len()];
    passthrough[NO_TWEET_COLUMN] = true;
    FeatureScaler::fit(&FeatureMatrix::from_records(rows), &passthrough)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveTable {
    pub columns: Vec<String>,
    pub stats: Vec<ColumnStats>,
}

/// Linear interpolation between order statistics (type 7); `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn column_stats(values: &[f64]) -> ColumnStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    ColumnStats {
        mean,
        std,
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        q50: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    }
}

pub fn descriptive_stats(rows: &[IntervalRecord]) -> Result<DescriptiveTable> {
    if rows.is_empty() {
        return Err(Error::EmptySeries("descriptive statistics need at least one row"));
    }
    let m = FeatureMatrix::from_records(rows);
    let stats = (0..m.n_cols())
        .map(|j| {
            let col: Vec<f64> = m.rows().map(|r| r[j]).collect();
            column_stats(&col)
        })
        .collect();
    Ok(DescriptiveTable {
        columns: feature_schema(),
        stats,
    })
}

/// Rows are statistics, columns are variables.
pub fn write_descriptive_csv<W: Write>(writer: W, table: &DescriptiveTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["statistic".to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header)?;
    let getters: [(&str, fn(&ColumnStats) -> f64); 7] = [
        ("mean", |s| s.mean),
        ("std", |s| s.std),
        ("min", |s| s.min),
        ("25%", |s| s.q25),
        ("50%", |s| s.q50),
        ("75%", |s| s.q75),
        ("max", |s| s.max),
    ];
    for (name, get) in getters {
        let mut row = vec![name.to_string()];
        row.extend(table.stats.iter().map(|s| get(s).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tweets_csv<R: Read>(reader: R) -> Result<Vec<TweetEmotion>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Ingest {
            row: 0,
            message: format!("missing column `{name}`"),
        })
    };
    let ts_col = col("timestamp")?;
    let emo_cols = EMOTIONS.iter().map(|e| col(e)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw_ts = rec.get(ts_col).unwrap_or("");
        let timestamp = parse_timestamp(raw_ts).ok_or_else(|| Error::Ingest {
            row,
            message: format!("unparseable timestamp `{raw_ts}`"),
        })?;
        let mut scores = [0.0; 7];
        for (k, &c) in emo_cols.iter().enumerate() {
            let raw = rec.get(c).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::Ingest {
                row,
                message: format!("column `{}`: cannot parse `{raw}`", EMOTIONS[k]),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Ingest {
                    row,
                    message: format!("score {v} for `{}` outside [0, 1]", EMOTIONS[k]),
                });
            }
            scores[k] = v;
        }
        out.push(TweetEmotion { timestamp, scores });
    }
    Ok(out)
}

pub fn write_tweets_csv<W: Write>(writer: W, tweets: &[TweetEmotion]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp"];
    header.extend(EMOTIONS);
    w.write_record(&header)?;
    for t in tweets {
        let mut row = vec![format_timestamp(t.timestamp)];
        row.extend(t.scores.iter().map(|s| s.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
