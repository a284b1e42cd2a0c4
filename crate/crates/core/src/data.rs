//! Panel file IO, chronological splits and seeded synthetic panels.
//!
//! Files use a long layout, one row per (date, ticker):
//!
//! ```text
//! date,ticker,open,high,low,close,volume,vwap
//! 2020-01-02,AAA,10.1,10.4,9.9,10.2,120000,10.15
//! ```
//!
//! Empty fields are missing values; absent (date, ticker) pairs are missing
//! cells. Prices are expected to be forward-adjusted upstream.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{AlphaExpr, Feature, MAX_WINDOW};
use crate::eval::evaluate;
use crate::panel::{Matrix, Panel, PanelError};

pub const HEADER: [&str; 8] = ["date", "ticker", "open", "high", "low", "close", "volume", "vwap"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header `{found}`, expected `{}`", HEADER.join(","))]
    MalformedHeader { found: String },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("line {line}: duplicate row for {date} / {ticker}")]
    Duplicate { line: u64, date: NaiveDate, ticker: String },
    #[error("line {line}: non-positive {feature} {value}")]
    NonPositivePrice { line: u64, feature: Feature, value: f64 },
    #[error("{0}")]
    Panel(#[from] PanelError),
    #[error("split `{0}` contains no dates")]
    EmptySplit(&'static str),
    #[error("split ranges must be chronological and non-overlapping: {0}")]
    InvalidSplit(String),
}

fn csv_err(e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    DataError::Row {
        line,
        message: e.to_string(),
    }
}

pub fn load_panel(path: impl AsRef<Path>) -> Result<Panel, DataError> {
    read_panel(std::fs::File::open(path)?)
}

pub fn read_panel<R: Read>(reader: R) -> Result<Panel, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(DataError::MalformedHeader {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    type Cell = [Option<f64>; 6];
    let mut cells: HashMap<(NaiveDate, String), Cell> = HashMap::new();
    let mut dates = BTreeSet::new();
    let mut tickers = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| DataError::Row {
            line,
            message: format!("bad date `{}`: {e}", &rec[0]),
        })?;
        let ticker = rec[1].to_string();
        if ticker.is_empty() {
            return Err(DataError::Row {
                line,
                message: "empty ticker".into(),
            });
        }
        let mut cell: Cell = [None; 6];
        for (k, feature) in Feature::ALL.iter().enumerate() {
            // file columns are open,high,low,close,volume,vwap = Feature::ALL order
            let raw = &rec[k + 2];
            if raw.is_empty() {
                continue;
            }
            let v: f64 = raw.parse().map_err(|_| DataError::Row {
                line,
                message: format!("bad {feature} value `{raw}`"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Row {
                    line,
                    message: format!("non-finite {feature}"),
                });
            }
            if *feature == Feature::Volume {
                if v < 0.0 {
                    return Err(DataError::Row {
                        line,
                        message: format!("negative volume {v}"),
                    });
                }
            } else if v <= 0.0 {
                return Err(DataError::NonPositivePrice {
                    line,
                    feature: *feature,
                    value: v,
                });
            }
            cell[k] = Some(v);
        }
        if cells.insert((date, ticker.clone()), cell).is_some() {
            return Err(DataError::Duplicate { line, date, ticker });
        }
        dates.insert(date);
        tickers.insert(ticker);
    }

    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let tickers: Vec<String> = tickers.into_iter().collect();
    let date_idx: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let ticker_idx: HashMap<&str, usize> = tickers.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut features = vec![Matrix::missing(tickers.len(), dates.len()); 6];
    for ((date, ticker), cell) in &cells {
        let (i, t) = (ticker_idx[ticker.as_str()], date_idx[date]);
        for (k, v) in cell.iter().enumerate() {
            if let Some(v) = v {
                features[k].set(i, t, *v);
            }
        }
    }
    Ok(Panel::new(tickers, dates, features)?)
}

pub fn save_panel(panel: &Panel, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_panel(panel, std::io::BufWriter::new(file))
}

/// Writes rows sorted by (date, ticker); cells with every feature missing are omitted.
pub fn write_panel<W: Write>(panel: &Panel, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER).map_err(csv_err)?;
    for (t, date) in panel.dates().iter().enumerate() {
        for (i, ticker) in panel.tickers().iter().enumerate() {
            let values: Vec<Option<f64>> = Feature::ALL.iter().map(|f| panel.feature(*f).get(i, t)).collect();
            if values.iter().all(Option::is_none) {
                continue;
            }
            let mut row = vec![date.format("%Y-%m-%d").to_string(), ticker.clone()];
            row.extend(values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Closed-open date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateRange { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl Default for SplitSpec {
    /// 2016–2020 train, 2020 validation, 2021–2024 test.
    fn default() -> Self {
        SplitSpec {
            train: DateRange::new(ymd(2016, 1, 1), ymd(2020, 1, 1)),
            validation: DateRange::new(ymd(2020, 1, 1), ymd(2021, 1, 1)),
            test: DateRange::new(ymd(2021, 1, 1), ymd(2024, 1, 1)),
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let parts = [("train", self.train), ("validation", self.validation), ("test", self.test)];
        for (name, r) in parts {
            if r.start >= r.end {
                return Err(DataError::InvalidSplit(format!("{name} range is empty or reversed")));
            }
        }
        if self.train.end > self.validation.start || self.validation.end > self.test.start {
            return Err(DataError::InvalidSplit("ranges overlap or are out of order".into()));
        }
        Ok(())
    }

    /// Leading context days for warm-up: horizon plus the longest window.
    pub fn default_context(horizon: usize) -> usize {
        horizon + MAX_WINDOW as usize
    }
}

#[derive(Debug, Clone)]
pub struct SplitPanels {
    pub train: Panel,
    pub validation: Panel,
    pub test: Panel,
}

impl SplitPanels {
    pub fn get(&self, name: SplitName) -> &Panel {
        match name {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.validation,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitName::Train),
            "valid" | "validation" => Ok(SplitName::Valid),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split `{other}` (train, valid, test)")),
        }
    }
}

/// Partitions the date axis. Each part keeps up to `context` preceding days
/// as warm-up context; metrics only cover the in-range days.
pub fn split(panel: &Panel, spec: &SplitSpec, context: usize) -> Result<SplitPanels, DataError> {
    spec.validate()?;
    let part = |name: &'static str, r: DateRange| -> Result<Panel, DataError> {
        let dates = panel.dates();
        let first = dates.iter().position(|d| r.contains(*d)).ok_or(DataError::EmptySplit(name))?;
        let last = dates.iter().rposition(|d| r.contains(*d)).expect("first exists");
        let lo = first.saturating_sub(context);
        Ok(panel.slice_days(lo..last + 1).with_metric_start(first - lo)?)
    };
    Ok(SplitPanels {
        train: part("train", spec.train)?,
        validation: part("validation", spec.validation)?,
        test: part("test", spec.test)?,
    })
}

/// Weekdays starting at `start` (inclusive if it is a weekday).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// A relation planted into synthetic data: the `horizon`-day forward return
/// is `scale * (zscore(expr) + noise * eps)` cross-sectionally on every day
/// where `expr` is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSignal {
    pub expr: AlphaExpr,
    pub noise: f64,
    pub horizon: usize,
    pub scale: f64,
}

impl PlantedSignal {
    pub fn new(expr: AlphaExpr, noise: f64) -> Self {
        PlantedSignal {
            expr,
            noise,
            horizon: crate::eval::DEFAULT_HORIZON,
            scale: 0.01,
        }
    }
}

pub const SYNTHETIC_START: (i32, u32, u32) = (2016, 1, 4);

/// Seeded geometric random-walk panel, optionally with a planted signal.
pub fn synthetic_panel(seed: u64, n: usize, days: usize, signal: Option<&PlantedSignal>) -> Panel {
    assert!(n >= 2 && days >= 10, "synthetic panels need n >= 2 and T >= 10");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, m, d) = SYNTHETIC_START;
    let dates = business_days(ymd(y, m, d), days);
    let tickers: Vec<String> = (0..n).map(|i| format!("S{i:04}")).collect();

    let vol: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.03)).collect();
    let log_volume: Vec<f64> = (0..n).map(|_| rng.random_range(11.0..15.0)).collect();
    let mut feats = vec![Matrix::missing(n, days); 6];

    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let fill_column = |feats: &mut Vec<Matrix>, rng: &mut ChaCha8Rng, s: usize, close: &[f64]| {
        for i in 0..n {
            let prev = if s == 0 { close[i] } else { feats[Feature::Close.index()].at(i, s - 1) };
            let c = close[i];
            let open = prev * (0.3 * vol[i] * gauss(rng)).exp();
            let hi = open.max(c) * (1.0 + 0.5 * vol[i] * gauss(rng).abs());
            let lo = open.min(c) * (1.0 - 0.5 * vol[i] * gauss(rng).abs()).max(0.5);
            let vwap = lo + rng.random::<f64>() * (hi - lo);
            let volume = (log_volume[i] + 0.4 * gauss(rng)).exp().round();
            for (f, v) in [
                (Feature::Open, open),
                (Feature::High, hi),
                (Feature::Low, lo),
                (Feature::Close, c),
                (Feature::Volume, volume),
                (Feature::Vwap, vwap),
            ] {
                feats[f.index()].set(i, s, v);
            }
        }
    };

    let walk = |rng: &mut ChaCha8Rng, prev: f64, i: usize| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        prev * (vol[i] * z - 0.5 * vol[i] * vol[i]).exp()
    };

    let horizon = signal.map_or(1, |s| s.horizon.max(1));
    let mut s = 0;
    while s < days {
        // columns s..s+horizon can be planted from data up to column s-1
        let block_end = (s + horizon).min(days);
        let planted: Option<Matrix> = match signal {
            Some(sig) if s >= horizon => {
                let partial = Panel::new(tickers.clone(), dates[..s].to_vec(), feats.iter().map(|m| m.slice_cols(0..s)).collect())
                    .expect("synthetic data satisfies panel invariants");
                Some(evaluate(&sig.expr, &partial))
            }
            _ => None,
        };
        for col in s..block_end {
            let mut close = vec![0.0; n];
            let mut planted_col = vec![None; n];
            if let (Some(sig), Some(g)) = (signal, planted.as_ref()) {
                let t = col - horizon;
                let present: Vec<(usize, f64)> = (0..n).filter_map(|i| g.get(i, t).map(|v| (i, v))).collect();
                if present.len() >= 2 {
                    let k = present.len() as f64;
                    let mean = present.iter().map(|p| p.1).sum::<f64>() / k;
                    let sd = (present.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / k).sqrt();
                    if sd > 0.0 && sd.is_finite() {
                        for (i, v) in present {
                            let eps: f64 = StandardNormal.sample(&mut rng);
                            let ret = (sig.scale * ((v - mean) / sd + sig.noise * eps)).clamp(-0.5, 0.5);
                            planted_col[i] = Some(feats[Feature::Close.index()].at(i, t) * (1.0 + ret));
                        }
                    }
                }
            }
            for i in 0..n {
                close[i] = match planted_col[i] {
                    Some(c) => c,
                    None if col == 0 => rng.random_range(10.0..100.0),
                    None => walk(&mut rng, feats[Feature::Close.index()].at(i, col - 1), i),
                };
            }
            fill_column(&mut feats, &mut rng, col, &close);
        }
        s = block_end;
    }
    Panel::new(tickers, dates, feats).expect("synthetic data satisfies panel invariants")
}

/// Splits a panel by day position: the first `context` days are warm-up only,
/// the rest is divided 50/25/25 into train, validation and test.
pub fn split_by_fraction(panel: &Panel, context: usize) -> Result<SplitPanels, DataError> {
    let n = panel.n_days();
    if n < context + 8 {
        return Err(DataError::EmptySplit("train"));
    }
    let body = n - context;
    let d = |k: usize| panel.dates()[k];
    let spec = SplitSpec {
        train: DateRange::new(d(context), d(context + body / 2)),
        validation: DateRange::new(d(context + body / 2), d(context + body * 3 / 4)),
        test: DateRange::new(d(context + body * 3 / 4), d(n - 1) + chrono::Days::new(1)),
    };
    split(panel, &spec, context)
}
