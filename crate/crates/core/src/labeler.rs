//! Hindsight expert-trade labels.
//!
//! Labels read prices 10 and 20 bars into the future. They exist only to
//! build prompt-tuning exemplars and are never fed to [`crate::env`] or
//! [`crate::agent`]; nothing in those modules accepts a [`TradeLabel`].

use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::direction::Direction;

pub const SHORT_HORIZON: usize = 10;
pub const LONG_HORIZON: usize = 20;
pub const SHORT_WEIGHT: f64 = 0.4;
pub const LONG_WEIGHT: f64 = 0.6;

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("horizon error: index {t} needs {LONG_HORIZON} future bars but the series has length {len}")]
    Horizon { t: usize, len: usize },
    #[error("labels csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeLabel {
    pub date: Option<NaiveDate>,
    pub action: Direction,
    pub r10: f64,
    pub r20: f64,
    pub r_weighted: f64,
}

/// Label for bar `t`: LONG when `0.4 * r10 + 0.6 * r20 >= 0`.
pub fn expert_label(closes: &[f64], t: usize) -> Result<TradeLabel, LabelError> {
    if t + LONG_HORIZON >= closes.len() {
        return Err(LabelError::Horizon { t, len: closes.len() });
    }
    let p = closes[t];
    let r10 = closes[t + SHORT_HORIZON] / p - 1.0;
    let r20 = closes[t + LONG_HORIZON] / p - 1.0;
    let r_weighted = SHORT_WEIGHT * r10 + LONG_WEIGHT * r20;
    let action = if r_weighted >= 0.0 {
        Direction::Long
    } else {
        Direction::Short
    };
    Ok(TradeLabel {
        date: None,
        action,
        r10,
        r20,
        r_weighted,
    })
}

/// One label per index with a full 20-bar future; the last 20 bars stay
/// unlabeled.
pub fn label_series(closes: &[f64]) -> Result<Vec<TradeLabel>, LabelError> {
    if closes.len() <= LONG_HORIZON {
        return Err(LabelError::Horizon {
            t: 0,
            len: closes.len(),
        });
    }
    (0..closes.len() - LONG_HORIZON).map(|t| expert_label(closes, t)).collect()
}

/// As [`label_series`], stamping each label with its bar date.
pub fn label_dated(dates: &[NaiveDate], closes: &[f64]) -> Result<Vec<TradeLabel>, LabelError> {
    let mut labels = label_series(closes)?;
    for (label, date) in labels.iter_mut().zip(dates) {
        label.date = Some(*date);
    }
    Ok(labels)
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    date: Option<NaiveDate>,
    action: u8,
    r10: f64,
    r20: f64,
    r_weighted: f64,
}

/// `date,action,r10,r20,r_weighted` with action encoded as 1 (LONG) / 0 (SHORT).
pub fn write_labels_csv<W: Write>(labels: &[TradeLabel], writer: W) -> Result<(), LabelError> {
    let mut w = csv::Writer::from_writer(writer);
    for l in labels {
        w.serialize(LabelRow {
            date: l.date,
            action: l.action.index() as u8,
            r10: l.r10,
            r20: l.r20,
            r_weighted: l.r_weighted,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads heuristic or hand-annotated labels in the same schema.
pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<TradeLabel>, LabelError> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize::<LabelRow>()
        .map(|row| {
            let row = row?;
            Ok(TradeLabel {
                date: row.date,
                action: if row.action == 1 {
                    Direction::Long
                } else {
                    Direction::Short
                },
                r10: row.r10,
                r20: row.r20,
                r_weighted: row.r_weighted,
            })
        })
        .collect()
}
