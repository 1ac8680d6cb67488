//! Loading and aligning OHLCV bars, macro series and news.
//!
//! CSV inputs carry a header row, comma separators, ISO-8601 dates and `.`
//! decimals. Every loader also accepts a JSON list of objects with the same
//! field names when the path ends in `.json`.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::frame::{parse_date, FeatureFrame, FrameError, Frequency};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// One daily OHLCV bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    pub fn validate(&self) -> Result<(), IngestError> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(IngestError::Data(format!("{}: non-positive or non-finite price", self.date)));
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(IngestError::Data(format!("{}: negative volume", self.date)));
        }
        if self.low > self.open.min(self.close) || self.high < self.open.max(self.close) {
            return Err(IngestError::Data(format!(
                "{}: high/low do not bracket open/close",
                self.date
            )));
        }
        Ok(())
    }
}

/// Bars with strictly increasing dates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BarSeries {
    bars: Vec<Bar>,
}

impl BarSeries {
    /// Validates each bar and the ordering of dates.
    pub fn new(bars: Vec<Bar>) -> Result<Self, IngestError> {
        for b in &bars {
            b.validate()?;
        }
        for w in bars.windows(2) {
            if w[1].date <= w[0].date {
                return Err(IngestError::Data(format!(
                    "dates not strictly increasing at {}",
                    w[1].date
                )));
            }
        }
        Ok(BarSeries { bars })
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    /// Frame with `Open`, `High`, `Low`, `Close` and `Volume` columns.
    pub fn to_frame(&self) -> FeatureFrame {
        let mut f = FeatureFrame::new(self.dates()).expect("bar dates are strictly increasing");
        let col = |g: fn(&Bar) -> f64| self.bars.iter().map(|b| Some(g(b))).collect::<Vec<_>>();
        f.insert("Open", col(|b| b.open)).unwrap();
        f.insert("High", col(|b| b.high)).unwrap();
        f.insert("Low", col(|b| b.low)).unwrap();
        f.insert("Close", col(|b| b.close)).unwrap();
        f.insert("Volume", col(|b| b.volume)).unwrap();
        f
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "open", "high", "low", "close", "volume"])?;
        for b in &self.bars {
            w.write_record([
                b.date.format("%Y-%m-%d").to_string(),
                b.open.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.close.to_string(),
                b.volume.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

const OHLCV_COLUMNS: [&str; 6] = ["date", "open", "high", "low", "close", "volume"];

/// Loads a daily OHLCV file. Rows are returned sorted by date; duplicate
/// dates are an error rather than being dropped.
pub fn load_ohlcv(path: impl AsRef<Path>) -> Result<BarSeries, IngestError> {
    let path = path.as_ref();
    let file = open(path)?;
    if is_json(path) {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = serde_json::from_reader(BufReader::new(file))?;
        let mut bars = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            for c in OHLCV_COLUMNS {
                if !row.contains_key(c) {
                    return Err(IngestError::Schema(format!("record {i} lacks field {c:?}")));
                }
            }
            let bar: Bar = serde_json::from_value(serde_json::Value::Object(row.clone()))?;
            bars.push(bar);
        }
        finish_bars(bars)
    } else {
        read_ohlcv_csv(file)
    }
}

pub fn read_ohlcv_csv<R: Read>(reader: R) -> Result<BarSeries, IngestError> {
    let mut r = csv::Reader::from_reader(reader);
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    let mut pos = [0usize; 6];
    for (k, name) in OHLCV_COLUMNS.iter().enumerate() {
        pos[k] = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::Schema(format!("missing column {name:?}")))?;
    }
    let mut bars = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let cell = |k: usize| rec.get(pos[k]).unwrap_or("").trim();
        let date = parse_date(cell(0))
            .ok_or_else(|| IngestError::Data(format!("row {}: bad date {:?}", line + 1, cell(0))))?;
        let num = |k: usize| -> Result<f64, IngestError> {
            cell(k).parse::<f64>().map_err(|_| {
                IngestError::Data(format!("row {}: bad {} value {:?}", line + 1, OHLCV_COLUMNS[k], cell(k)))
            })
        };
        bars.push(Bar {
            date,
            open: num(1)?,
            high: num(2)?,
            low: num(3)?,
            close: num(4)?,
            volume: num(5)?,
        });
    }
    finish_bars(bars)
}

fn finish_bars(mut bars: Vec<Bar>) -> Result<BarSeries, IngestError> {
    bars.sort_by_key(|b| b.date);
    if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
        return Err(IngestError::Data(format!("duplicate date {}", w[0].date)));
    }
    BarSeries::new(bars)
}

/// A named low- or high-frequency scalar series such as GDP or PMI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSeries {
    pub name: String,
    pub frequency: Frequency,
    pub observations: Vec<(NaiveDate, f64)>,
}

impl MacroSeries {
    pub fn new(name: impl Into<String>, frequency: Frequency, mut observations: Vec<(NaiveDate, f64)>) -> Result<Self, IngestError> {
        let name = name.into();
        observations.sort_by_key(|o| o.0);
        if let Some(w) = observations.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(IngestError::Data(format!("{name}: duplicate date {}", w[0].0)));
        }
        Ok(MacroSeries {
            name,
            frequency,
            observations,
        })
    }

    /// Reads a `date,value` file.
    pub fn load(path: impl AsRef<Path>, name: impl Into<String>, frequency: Frequency) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let file = open(path)?;
        let obs = if is_json(path) {
            #[derive(Deserialize)]
            struct Obs {
                date: NaiveDate,
                value: f64,
            }
            let rows: Vec<Obs> = serde_json::from_reader(BufReader::new(file))?;
            rows.into_iter().map(|o| (o.date, o.value)).collect()
        } else {
            let mut r = csv::Reader::from_reader(file);
            let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
            let di = headers
                .iter()
                .position(|h| h == "date")
                .ok_or_else(|| IngestError::Schema("missing column \"date\"".into()))?;
            let vi = headers
                .iter()
                .position(|h| h == "value")
                .ok_or_else(|| IngestError::Schema("missing column \"value\"".into()))?;
            let mut obs = Vec::new();
            for rec in r.records() {
                let rec = rec?;
                let date = parse_date(rec.get(di).unwrap_or(""))
                    .ok_or_else(|| IngestError::Data(format!("bad date {:?}", rec.get(di))))?;
                let value: f64 = rec
                    .get(vi)
                    .unwrap_or("")
                    .trim()
                    .parse()
                    .map_err(|_| IngestError::Data(format!("{date}: bad value")))?;
                obs.push((date, value));
            }
            obs
        };
        MacroSeries::new(name, frequency, obs)
    }

    pub fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.1).collect()
    }

    /// Single-column frame tagged with this series' frequency.
    pub fn to_frame(&self) -> FeatureFrame {
        let mut f = FeatureFrame::new(self.observations.iter().map(|o| o.0).collect())
            .expect("observations are sorted and unique")
            .with_frequency(self.frequency);
        f.insert(self.name.clone(), self.observations.iter().map(|o| Some(o.1)).collect())
            .unwrap();
        f
    }

    /// Period-over-period relative change as a new series named `name`. The
    /// warm-up and zero-denominator positions are dropped.
    pub fn pct_change(&self, lag: usize, name: impl Into<String>) -> Result<MacroSeries, IngestError> {
        let changes = pct_change_period(&self.values(), lag)?;
        let obs = self
            .observations
            .iter()
            .zip(changes)
            .filter_map(|(o, c)| c.map(|c| (o.0, c)))
            .collect();
        MacroSeries::new(name, self.frequency, obs)
    }
}

/// How [`align_by_timestamp`] builds the output calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignPolicy {
    /// Keep only dates present in every frame.
    Inner,
    /// Union of the daily frames' dates; lower-frequency frames carry their
    /// last observation forward. Gaps in daily frames stay missing.
    ForwardFill,
}

/// Merges frames onto one calendar. Column names must be unique across frames.
pub fn align_by_timestamp(frames: &[FeatureFrame], policy: AlignPolicy) -> Result<FeatureFrame, IngestError> {
    if frames.iter().all(FeatureFrame::is_empty) {
        return Err(IngestError::Alignment("no non-empty frame to align".into()));
    }
    let mut seen = BTreeSet::new();
    for f in frames {
        for name in f.column_names() {
            if !seen.insert(name.to_string()) {
                return Err(IngestError::Alignment(format!("column {name:?} appears in more than one frame")));
            }
        }
    }

    match policy {
        AlignPolicy::Inner => {
            let mut common: BTreeSet<NaiveDate> = frames[0].index().iter().copied().collect();
            for f in &frames[1..] {
                let other: BTreeSet<NaiveDate> = f.index().iter().copied().collect();
                common = common.intersection(&other).copied().collect();
            }
            if common.is_empty() {
                return Err(IngestError::Alignment("indices have an empty intersection".into()));
            }
            let index: Vec<NaiveDate> = common.into_iter().collect();
            let mut out = FeatureFrame::new(index.clone())?;
            for f in frames {
                let lookup: HashMap<NaiveDate, usize> = f.index().iter().enumerate().map(|(i, d)| (*d, i)).collect();
                for (name, col) in f.columns() {
                    out.insert(name.clone(), index.iter().map(|d| col[lookup[d]]).collect())?;
                }
            }
            Ok(out)
        }
        AlignPolicy::ForwardFill => {
            let has_daily = frames.iter().any(|f| f.frequency() == Frequency::Daily && !f.is_empty());
            let calendar: BTreeSet<NaiveDate> = frames
                .iter()
                .filter(|f| !has_daily || f.frequency() == Frequency::Daily)
                .flat_map(|f| f.index().iter().copied())
                .collect();
            let index: Vec<NaiveDate> = calendar.into_iter().collect();
            let mut out = FeatureFrame::new(index.clone())?;
            for f in frames {
                let carry = !has_daily || f.frequency() != Frequency::Daily;
                for (name, col) in f.columns() {
                    let values = if carry {
                        as_of(f.index(), col, &index)
                    } else {
                        let lookup: HashMap<NaiveDate, usize> =
                            f.index().iter().enumerate().map(|(i, d)| (*d, i)).collect();
                        index.iter().map(|d| lookup.get(d).and_then(|&i| col[i])).collect()
                    };
                    out.insert(name.clone(), values)?;
                }
            }
            Ok(out)
        }
    }
}

/// For each target date, the last non-missing source value dated on or before it.
fn as_of(src_index: &[NaiveDate], src: &[Option<f64>], targets: &[NaiveDate]) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(targets.len());
    let mut j = 0;
    let mut last = None;
    for d in targets {
        while j < src_index.len() && src_index[j] <= *d {
            if src[j].is_some() {
                last = src[j];
            }
            j += 1;
        }
        out.push(last);
    }
    out
}

/// `out[t] = series[t] / series[t - lag] - 1`. The first `lag` entries and
/// any position with a zero (or non-finite) result are missing.
pub fn pct_change_period(series: &[f64], lag: usize) -> Result<Vec<Option<f64>>, IngestError> {
    if lag == 0 {
        return Err(IngestError::Argument("lag must be positive".into()));
    }
    if lag >= series.len() {
        return Err(IngestError::Argument(format!(
            "lag {lag} is not smaller than series length {}",
            series.len()
        )));
    }
    Ok((0..series.len())
        .map(|t| {
            if t < lag || series[t - lag] == 0.0 {
                return None;
            }
            let v = series[t] / series[t - lag] - 1.0;
            v.is_finite().then_some(v)
        })
        .collect())
}

/// One raw news article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsItem {
    pub date: NaiveDate,
    pub headline: String,
    pub body: String,
}

/// Loads a JSON list of `{date, headline, body}`, sorted by date.
pub fn load_news(path: impl AsRef<Path>) -> Result<Vec<NewsItem>, IngestError> {
    let file = open(path.as_ref())?;
    let mut items: Vec<NewsItem> = serde_json::from_reader(BufReader::new(file))?;
    items.sort_by_key(|n| n.date);
    Ok(items)
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}
