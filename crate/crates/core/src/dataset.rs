//! Tabular time-to-event data: a covariate matrix plus per-subject
//! `(time, event)` outcomes.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Validated survival data. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    features: Array2<f64>,
    times: Vec<f64>,
    events: Vec<bool>,
    feature_names: Vec<String>,
    feature_ranges: Vec<(f64, f64)>,
}

impl SurvivalDataset {
    /// Build a dataset from parts, checking every invariant.
    pub fn new(
        features: Array2<f64>,
        times: Vec<f64>,
        events: Vec<bool>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = features.dim();
        if n == 0 {
            return Err(Error::Validation("dataset has no subjects".into()));
        }
        if p == 0 {
            return Err(Error::Validation("dataset has no features".into()));
        }
        if times.len() != n || events.len() != n {
            return Err(Error::Shape(format!(
                "{} feature rows, {} times, {} event indicators",
                n,
                times.len(),
                events.len()
            )));
        }
        if feature_names.len() != p {
            return Err(Error::Shape(format!(
                "{} feature columns but {} names",
                p,
                feature_names.len()
            )));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Validation(format!(
                "time {} of subject {} is not a non-negative finite number",
                times[i], i
            )));
        }
        if !events.iter().any(|&e| e) {
            return Err(Error::Validation("no subject has an observed event".into()));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite feature value {v}")));
        }
        let feature_ranges = features
            .columns()
            .into_iter()
            .map(|col| {
                col.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .collect();
        // Row-major storage keeps per-subject access contiguous.
        let features = if features.is_standard_layout() {
            features
        } else {
            features.as_standard_layout().into_owned()
        };
        Ok(Self {
            features,
            times,
            events,
            feature_names,
            feature_ranges,
        })
    }

    /// Load a CSV file with a header row.
    ///
    /// Every column other than `time_col` and `event_col` is a covariate. A
    /// column that does not parse as numbers is one-hot expanded into
    /// `col=value` indicator columns when `one_hot` is set, and rejected
    /// otherwise. Empty cells are rejected.
    pub fn load_csv(
        path: impl AsRef<Path>,
        time_col: &str,
        event_col: &str,
        one_hot: bool,
    ) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(file, time_col, event_col, one_hot)
    }

    pub fn from_csv_reader<R: Read>(
        reader: R,
        time_col: &str,
        event_col: &str,
        one_hot: bool,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let col_index = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_owned()))
        };
        let time_idx = col_index(time_col)?;
        let event_idx = col_index(event_col)?;

        let mut rows: Vec<csv::StringRecord> = Vec::new();
        for record in rdr.records() {
            rows.push(record?);
        }
        if rows.is_empty() {
            return Err(Error::Validation("file has no data rows".into()));
        }

        let mut times = Vec::with_capacity(rows.len());
        let mut events = Vec::with_capacity(rows.len());
        for (r, row) in rows.iter().enumerate() {
            let cell = cell_of(row, time_idx, r, time_col)?;
            let t: f64 = cell.parse().map_err(|_| Error::Parse {
                row: r + 1,
                column: time_col.to_owned(),
                message: format!("`{cell}` is not a number"),
            })?;
            times.push(t);
            events.push(parse_event(cell_of(row, event_idx, r, event_col)?, r, event_col)?);
        }

        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut names = Vec::new();
        for (c, name) in header.iter().enumerate() {
            if c == time_idx || c == event_idx {
                continue;
            }
            let cells: Vec<&str> = rows
                .iter()
                .enumerate()
                .map(|(r, row)| cell_of(row, c, r, name))
                .collect::<Result<_>>()?;
            let numeric: std::result::Result<Vec<f64>, usize> = cells
                .iter()
                .enumerate()
                .map(|(r, s)| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(r))
                .collect();
            match numeric {
                Ok(values) => {
                    columns.push(values);
                    names.push(name.clone());
                }
                Err(bad_row) if !one_hot => {
                    return Err(Error::Parse {
                        row: bad_row + 1,
                        column: name.clone(),
                        message: format!(
                            "`{}` is not numeric (enable one-hot encoding for categorical columns)",
                            cells[bad_row]
                        ),
                    });
                }
                Err(_) => {
                    let levels: BTreeSet<&str> = cells.iter().copied().collect();
                    for level in levels {
                        columns.push(
                            cells
                                .iter()
                                .map(|&s| if s == level { 1.0 } else { 0.0 })
                                .collect(),
                        );
                        names.push(format!("{name}={level}"));
                    }
                }
            }
        }
        if columns.is_empty() {
            return Err(Error::Validation("no covariate columns".into()));
        }

        let n = rows.len();
        let p = columns.len();
        let features = Array2::from_shape_fn((n, p), |(i, j)| columns[j][i]);
        Self::new(features, times, events, names)
    }

    /// Write covariates followed by `time_col` and `event_col` (0/1) with a
    /// header row. Reading the output back with [`Self::from_csv_reader`]
    /// reproduces the dataset exactly.
    pub fn write_csv<W: Write>(&self, writer: W, time_col: &str, event_col: &str) -> Result<()> {
        if self.feature_names.iter().any(|n| n == time_col || n == event_col) || time_col == event_col {
            return Err(Error::Argument(format!(
                "outcome columns `{time_col}`/`{event_col}` clash with covariate names"
            )));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.extend([time_col, event_col]);
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(self.p() + 2);
        for i in 0..self.n() {
            record.clear();
            record.extend(self.row(i).iter().map(f64::to_string));
            record.push(self.times[i].to_string());
            record.push(if self.events[i] { "1" } else { "0" }.to_owned());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.feature_names.len()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Covariates of subject `i` as a contiguous slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.features.as_slice().expect("standard layout")[i * p..(i + 1) * p]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Per-feature `(min, max)` observed at construction.
    pub fn feature_ranges(&self) -> &[(f64, f64)] {
        &self.feature_ranges
    }

    /// Distinct times of observed events, strictly ascending.
    pub fn unique_event_times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .times
            .iter()
            .zip(&self.events)
            .filter(|(_, &e)| e)
            .map(|(&t, _)| t)
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Same covariates, different outcomes. Used for permutation nulls.
    pub fn with_outcomes(&self, times: Vec<f64>, events: Vec<bool>) -> Result<Self> {
        Self::new(
            self.features.clone(),
            times,
            events,
            self.feature_names.clone(),
        )
    }

    /// Hex SHA-256 over names, covariates and outcomes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.p() as u64).to_le_bytes());
        for name in &self.feature_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for v in self.features.iter() {
            h.update(v.to_le_bytes());
        }
        for (t, e) in self.times.iter().zip(&self.events) {
            h.update(t.to_le_bytes());
            h.update([*e as u8]);
        }
        hex::encode(h.finalize())
    }
}

fn cell_of<'a>(row: &'a csv::StringRecord, idx: usize, r: usize, column: &str) -> Result<&'a str> {
    match row.get(idx) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(Error::Parse {
            row: r + 1,
            column: column.to_owned(),
            message: "missing value".into(),
        }),
    }
}

fn parse_event(s: &str, r: usize, column: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" => return Ok(true),
        "0" | "false" => return Ok(false),
        _ => {}
    }
    match s.parse::<f64>() {
        Ok(v) if v == 1.0 => Ok(true),
        Ok(v) if v == 0.0 => Ok(false),
        Ok(v) => Err(Error::Validation(format!(
            "row {}: event indicator {v} in `{column}` is not 0 or 1",
            r + 1
        ))),
        Err(_) => Err(Error::Parse {
            row: r + 1,
            column: column.to_owned(),
            message: format!("`{s}` is not an event indicator (0/1/true/false)"),
        }),
    }
}
