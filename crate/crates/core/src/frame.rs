//! Timestamp-indexed table of named feature columns.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("index is not strictly increasing at position {position} ({date})")]
    UnsortedIndex { position: usize, date: NaiveDate },
    #[error("column {name:?} has {got} values but the index has {expected}")]
    LengthMismatch { name: String, expected: usize, got: usize },
    #[error("frame csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("frame csv: {0}")]
    Parse(String),
}

/// Observation frequency of a frame. Alignment carries lower-frequency frames
/// forward onto the daily calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    #[default]
    Daily,
    Monthly,
    Quarterly,
}

/// Feature columns aligned to a strictly increasing date index. Missing
/// values are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureFrame {
    index: Vec<NaiveDate>,
    columns: BTreeMap<String, Vec<Option<f64>>>,
    frequency: Frequency,
}

impl FeatureFrame {
    pub fn new(index: Vec<NaiveDate>) -> Result<Self, FrameError> {
        check_increasing(&index)?;
        Ok(FeatureFrame {
            index,
            columns: BTreeMap::new(),
            frequency: Frequency::Daily,
        })
    }

    pub fn with_frequency(mut self, frequency: Frequency) -> Self {
        self.frequency = frequency;
        self
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn index(&self) -> &[NaiveDate] {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn columns(&self) -> &BTreeMap<String, Vec<Option<f64>>> {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn value(&self, name: &str, row: usize) -> Option<f64> {
        self.columns.get(name).and_then(|c| c.get(row).copied().flatten())
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<Option<f64>>) -> Result<(), FrameError> {
        let name = name.into();
        if values.len() != self.index.len() {
            return Err(FrameError::LengthMismatch {
                name,
                expected: self.index.len(),
                got: values.len(),
            });
        }
        self.columns.insert(name, values);
        Ok(())
    }

    /// Inserts a fully observed column.
    pub fn insert_dense(&mut self, name: impl Into<String>, values: &[f64]) -> Result<(), FrameError> {
        self.insert(name, values.iter().copied().map(Some).collect())
    }

    pub fn position(&self, date: NaiveDate) -> Option<usize> {
        self.index.binary_search(&date).ok()
    }

    /// Rows `[start, end)` as a new frame.
    pub fn slice(&self, start: usize, end: usize) -> FeatureFrame {
        let end = end.min(self.len());
        let start = start.min(end);
        FeatureFrame {
            index: self.index[start..end].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), v[start..end].to_vec()))
                .collect(),
            frequency: self.frequency,
        }
    }

    /// Writes `date,<columns...>` with empty cells for missing values.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), FrameError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.columns.keys().cloned());
        w.write_record(&header)?;
        for (row, date) in self.index.iter().enumerate() {
            let mut record = vec![date.format("%Y-%m-%d").to_string()];
            for col in self.columns.values() {
                record.push(col[row].map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, FrameError> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.get(0).map(str::trim) != Some("date") {
            return Err(FrameError::Parse("first column must be \"date\"".into()));
        }
        let names: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut index = Vec::new();
        let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let date = parse_date(rec.get(0).unwrap_or(""))
                .ok_or_else(|| FrameError::Parse(format!("row {}: bad date", line + 1)))?;
            index.push(date);
            for (j, col) in cols.iter_mut().enumerate() {
                let cell = rec.get(j + 1).unwrap_or("").trim();
                if cell.is_empty() {
                    col.push(None);
                } else {
                    let v: f64 = cell
                        .parse()
                        .map_err(|_| FrameError::Parse(format!("row {}: bad number {cell:?}", line + 1)))?;
                    col.push(Some(v));
                }
            }
        }
        let mut frame = FeatureFrame::new(index)?;
        for (name, col) in names.into_iter().zip(cols) {
            frame.insert(name, col)?;
        }
        Ok(frame)
    }
}

pub(crate) fn check_increasing(index: &[NaiveDate]) -> Result<(), FrameError> {
    for (i, w) in index.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(FrameError::UnsortedIndex {
                position: i + 1,
                date: w[1],
            });
        }
    }
    Ok(())
}

pub(crate) fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    // Accept a bare date or the date part of an ISO-8601 timestamp.
    let head = s.get(..10).unwrap_or(s);
    NaiveDate::parse_from_str(head, "%Y-%m-%d").ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn rejects_unsorted_and_duplicate_index() {
        assert!(FeatureFrame::new(vec![d("2020-01-02"), d("2020-01-01")]).is_err());
        assert!(FeatureFrame::new(vec![d("2020-01-02"), d("2020-01-02")]).is_err());
    }

    #[test]
    fn column_length_checked() {
        let mut f = FeatureFrame::new(vec![d("2020-01-01"), d("2020-01-02")]).unwrap();
        assert!(f.insert_dense("x", &[1.0]).is_err());
        f.insert_dense("x", &[1.0, 2.0]).unwrap();
        assert_eq!(f.value("x", 1), Some(2.0));
    }

    #[test]
    fn csv_round_trip_keeps_missing() {
        let mut f = FeatureFrame::new(vec![d("2020-01-01"), d("2020-01-02"), d("2020-01-03")]).unwrap();
        f.insert("a", vec![None, Some(0.1), Some(-2.5e-7)]).unwrap();
        f.insert_dense("b", &[1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = FeatureFrame::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }
}
