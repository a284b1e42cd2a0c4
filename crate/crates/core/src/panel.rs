//! Stock × day matrices and the six-feature market panel.

use std::ops::Range;

use chrono::NaiveDate;
use thiserror::Error;

use crate::dsl::Feature;

/// Dense stocks × days matrix. `NaN` marks a missing entry.
///
/// Equality is bitwise on present values; missing entries compare equal.
#[derive(Debug, Clone)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PartialEq for Matrix {
    fn eq(&self, other: &Matrix) -> bool {
        self.same_values(other)
    }
}

/// Predicted values, one per (stock, day).
pub type ScoreMatrix = Matrix;
/// Realized forward returns, one per (stock, day).
pub type ReturnMatrix = Matrix;

impl Matrix {
    pub fn missing(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, f64::NAN)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds from per-stock rows; `None` entries become missing.
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Matrix::missing(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "ragged rows");
            for (t, v) in r.iter().enumerate() {
                if let Some(v) = v {
                    m.set(i, t, *v);
                }
            }
        }
        m
    }

    /// Builds from raw rows where `NaN` means missing.
    pub fn from_raw_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend(r.iter().map(|v| if v.is_finite() { *v } else { f64::NAN }));
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, t: usize) -> Option<f64> {
        let v = self.data[i * self.cols + t];
        (!v.is_nan()).then_some(v)
    }

    /// Raw value, `NaN` when missing.
    #[inline]
    pub fn at(&self, i: usize, t: usize) -> f64 {
        self.data[i * self.cols + t]
    }

    /// Stores `value`, coercing non-finite values to missing.
    #[inline]
    pub fn set(&mut self, i: usize, t: usize, value: f64) {
        self.data[i * self.cols + t] = if value.is_finite() { value } else { f64::NAN };
    }

    pub fn set_missing(&mut self, i: usize, t: usize) {
        self.data[i * self.cols + t] = f64::NAN;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.at(i, t)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Elementwise map; non-finite results become missing.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&v| {
                    let r = f(v);
                    if r.is_finite() {
                        r
                    } else {
                        f64::NAN
                    }
                })
                .collect(),
        }
    }

    /// Elementwise combination of two same-shape matrices.
    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| {
                    let r = f(a, b);
                    if r.is_finite() {
                        r
                    } else {
                        f64::NAN
                    }
                })
                .collect(),
        }
    }

    /// Columns `range` of every row.
    pub fn slice_cols(&self, range: Range<usize>) -> Matrix {
        let cols = range.len();
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[range.clone()]);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Bitwise equality, treating missing entries as equal.
    pub fn same_values(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }

    pub fn count_present(&self) -> usize {
        self.data.iter().filter(|v| !v.is_nan()).count()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PanelError {
    #[error("feature {feature} has shape {found:?}, expected {expected:?}")]
    Shape {
        feature: Feature,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("dates are not strictly increasing at index {0}")]
    UnsortedDates(usize),
    #[error("duplicate ticker `{0}`")]
    DuplicateTicker(String),
    #[error("{feature} for `{ticker}` on {date} is {value}; prices must be positive")]
    NonPositivePrice {
        feature: Feature,
        ticker: String,
        date: NaiveDate,
        value: f64,
    },
    #[error("negative volume for `{ticker}` on {date}")]
    NegativeVolume { ticker: String, date: NaiveDate },
    #[error("metric start {start} beyond {days} days")]
    MetricStart { start: usize, days: usize },
}

/// Per-feature stocks × days matrices sharing one pair of axes.
///
/// Columns before `metric_start` are context: they feed rolling windows but
/// carry no fitness weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    features: Vec<Matrix>,
    metric_start: usize,
}

impl Panel {
    /// `features` are in [`Feature::ALL`] order.
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>, features: Vec<Matrix>) -> Result<Self, PanelError> {
        assert_eq!(features.len(), Feature::ALL.len(), "one matrix per feature");
        let expected = (tickers.len(), dates.len());
        for (f, m) in Feature::ALL.iter().zip(&features) {
            if m.shape() != expected {
                return Err(PanelError::Shape {
                    feature: *f,
                    expected,
                    found: m.shape(),
                });
            }
        }
        if let Some(t) = dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(PanelError::UnsortedDates(t + 1));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &tickers {
            if !seen.insert(t) {
                return Err(PanelError::DuplicateTicker(t.clone()));
            }
        }
        for (f, m) in Feature::ALL.iter().zip(&features) {
            for i in 0..m.rows() {
                for (t, &v) in m.row(i).iter().enumerate() {
                    if v.is_nan() {
                        continue;
                    }
                    if *f == Feature::Volume {
                        if v < 0.0 {
                            return Err(PanelError::NegativeVolume {
                                ticker: tickers[i].clone(),
                                date: dates[t],
                            });
                        }
                    } else if v <= 0.0 {
                        return Err(PanelError::NonPositivePrice {
                            feature: *f,
                            ticker: tickers[i].clone(),
                            date: dates[t],
                            value: v,
                        });
                    }
                }
            }
        }
        Ok(Panel {
            tickers,
            dates,
            features,
            metric_start: 0,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn feature(&self, f: Feature) -> &Matrix {
        &self.features[f.index()]
    }

    pub fn close(&self) -> &Matrix {
        self.feature(Feature::Close)
    }

    pub fn metric_start(&self) -> usize {
        self.metric_start
    }

    /// Day columns that carry fitness weight.
    pub fn metric_range(&self) -> Range<usize> {
        self.metric_start..self.n_days()
    }

    pub fn metric_dates(&self) -> &[NaiveDate] {
        &self.dates[self.metric_start..]
    }

    pub fn with_metric_start(mut self, start: usize) -> Result<Self, PanelError> {
        if start > self.n_days() {
            return Err(PanelError::MetricStart {
                start,
                days: self.n_days(),
            });
        }
        self.metric_start = start;
        Ok(self)
    }

    /// Sub-panel over day columns `range`; the metric start resets to 0.
    pub fn slice_days(&self, range: Range<usize>) -> Panel {
        Panel {
            tickers: self.tickers.clone(),
            dates: self.dates[range.clone()].to_vec(),
            features: self.features.iter().map(|m| m.slice_cols(range.clone())).collect(),
            metric_start: 0,
        }
    }

    /// Copy with one feature matrix swapped. Used by tests that perturb data.
    pub fn with_feature(&self, f: Feature, m: Matrix) -> Result<Panel, PanelError> {
        let mut features = self.features.clone();
        features[f.index()] = m;
        Panel::new(self.tickers.clone(), self.dates.clone(), features)?.with_metric_start(self.metric_start)
    }
}
