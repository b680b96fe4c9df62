//! Cumulative case-count ingestion.
//!
//! Input files carry one row per calendar day with cumulative confirmed
//! infections, recoveries and deaths. The observation model works on the
//! derived Active Infections series `confirmed - recovered - deaths` together
//! with the two cumulative series.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(&'static str),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("{date}: confirmed ({confirmed}) is smaller than recovered + deaths ({removed})")]
    NegativeActive {
        date: NaiveDate,
        confirmed: u64,
        removed: u64,
    },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("date gap between {0} and {1}")]
    DateGap(NaiveDate, NaiveDate),
    #[error("cumulative `{series}` decreases on {date}")]
    Decreasing { series: &'static str, date: NaiveDate },
    #[error("no records")]
    Empty,
    #[error("split date {split} outside record range {first}..={last}")]
    SplitOutOfRange {
        split: NaiveDate,
        first: NaiveDate,
        last: NaiveDate,
    },
}

/// One day of cumulative counts as published.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCaseRecord {
    pub date: NaiveDate,
    pub confirmed_cum: u64,
    pub recovered_cum: u64,
    pub deaths_cum: u64,
}

impl RawCaseRecord {
    pub fn active(&self) -> u64 {
        self.confirmed_cum - self.recovered_cum - self.deaths_cum
    }

    fn validate(&self) -> Result<(), DataError> {
        let removed = self.recovered_cum + self.deaths_cum;
        if self.confirmed_cum < removed {
            return Err(DataError::NegativeActive {
                date: self.date,
                confirmed: self.confirmed_cum,
                removed,
            });
        }
        Ok(())
    }
}

/// Day-indexed observations. Day 0 is `day0_date`; the first `train_len`
/// days form the training window and the remaining `test_len` the test window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSeries {
    pub day0_date: NaiveDate,
    pub active: Vec<u64>,
    pub recovered: Vec<u64>,
    pub deaths: Vec<u64>,
    pub train_len: usize,
    pub test_len: usize,
}

/// The three observed series, in the order used by every exported table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Series {
    Active,
    Recovered,
    Deaths,
}

impl Series {
    pub const ALL: [Series; 3] = [Series::Active, Series::Recovered, Series::Deaths];

    pub fn name(self) -> &'static str {
        match self {
            Series::Active => "active",
            Series::Recovered => "recovered",
            Series::Deaths => "deaths",
        }
    }
}

impl ObservedSeries {
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn series(&self, series: Series) -> &[u64] {
        match series {
            Series::Active => &self.active,
            Series::Recovered => &self.recovered,
            Series::Deaths => &self.deaths,
        }
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.day0_date + chrono::Duration::days(day as i64)
    }

    /// Training days `1..train_len`; day 0 is the initial condition.
    pub fn train_range(&self) -> DayRange {
        DayRange::new(1, self.train_len)
    }

    pub fn test_range(&self) -> DayRange {
        DayRange::new(self.train_len, self.train_len + self.test_len)
    }
}

/// Half-open interval of day indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRange {
    pub start: usize,
    pub end: usize,
}

impl DayRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn days(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Reads a `date,confirmed,recovered,deaths` file. Column order is free and
/// header names are matched case-insensitively.
pub fn parse_csv(path: impl AsRef<Path>) -> Result<Vec<RawCaseRecord>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<Vec<RawCaseRecord>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(DataError::MissingColumn(name))
    };
    let (date_col, conf_col, rec_col, death_col) = (
        column("date")?,
        column("confirmed")?,
        column("recovered")?,
        column("deaths")?,
    );

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |idx: usize| {
            row.get(idx).ok_or_else(|| DataError::Malformed {
                line,
                message: format!("missing field {idx}"),
            })
        };
        let date_text = field(date_col)?;
        let date = NaiveDate::parse_from_str(date_text, "%Y-%m-%d").map_err(|e| {
            DataError::Malformed {
                line,
                message: format!("bad date `{date_text}`: {e}"),
            }
        })?;
        let count = |idx: usize| -> Result<u64, DataError> {
            let text = field(idx)?;
            text.parse::<u64>().map_err(|_| DataError::Malformed {
                line,
                message: format!("`{text}` is not a non-negative integer count"),
            })
        };
        let record = RawCaseRecord {
            date,
            confirmed_cum: count(conf_col)?,
            recovered_cum: count(rec_col)?,
            deaths_cum: count(death_col)?,
        };
        record.validate()?;
        records.push(record);
    }

    records.sort_by_key(|r| r.date);
    check_consecutive(&records)?;
    Ok(records)
}

fn check_consecutive(records: &[RawCaseRecord]) -> Result<(), DataError> {
    for pair in records.windows(2) {
        let (prev, next) = (pair[0], pair[1]);
        if prev.date == next.date {
            return Err(DataError::DuplicateDate(next.date));
        }
        if next.date.signed_duration_since(prev.date).num_days() != 1 {
            return Err(DataError::DateGap(prev.date, next.date));
        }
    }
    Ok(())
}

/// Builds the day-indexed series. Days up to and including `train_end` form
/// the training window.
pub fn derive_series(
    records: &[RawCaseRecord],
    train_end: NaiveDate,
) -> Result<ObservedSeries, DataError> {
    let mut records = records.to_vec();
    records.sort_by_key(|r| r.date);
    let (first, last) = match (records.first(), records.last()) {
        (Some(f), Some(l)) => (f.date, l.date),
        _ => return Err(DataError::Empty),
    };
    check_consecutive(&records)?;
    if train_end < first || train_end > last {
        return Err(DataError::SplitOutOfRange {
            split: train_end,
            first,
            last,
        });
    }

    for r in &records {
        r.validate()?;
    }
    for pair in records.windows(2) {
        if pair[1].recovered_cum < pair[0].recovered_cum {
            return Err(DataError::Decreasing {
                series: "recovered",
                date: pair[1].date,
            });
        }
        if pair[1].deaths_cum < pair[0].deaths_cum {
            return Err(DataError::Decreasing {
                series: "deaths",
                date: pair[1].date,
            });
        }
    }

    let train_len = train_end.signed_duration_since(first).num_days() as usize + 1;
    Ok(ObservedSeries {
        day0_date: first,
        active: records.iter().map(RawCaseRecord::active).collect(),
        recovered: records.iter().map(|r| r.recovered_cum).collect(),
        deaths: records.iter().map(|r| r.deaths_cum).collect(),
        train_len,
        test_len: records.len() - train_len,
    })
}

/// The bundled Qatar series, 29 February to 10 May 2020.
pub const QATAR_CSV: &str = include_str!("../data/qatar.csv");

pub fn qatar_records() -> Vec<RawCaseRecord> {
    parse_str(QATAR_CSV).expect("bundled fixture parses")
}

pub fn default_train_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 5, 1).expect("valid date")
}
