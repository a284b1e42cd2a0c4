//! Expression evaluation over panels and IC-based fitness.
//!
//! Evaluation is vectorized per AST node: every node produces a full
//! stocks × days [`Matrix`]. Rolling windows are right-aligned and include day
//! `t`; a value is emitted only when the full window is available, so nothing
//! at column `t` ever reads a later column.

mod metrics;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use metrics::{average_ranks, ic, ic_over, pearson, rank_ic, rank_ic_over, DailyCorrelations};

use crate::dsl::{AlphaExpr, Op};
use crate::panel::{Matrix, Panel, ReturnMatrix, ScoreMatrix};

/// Default forward-return horizon in trading days.
pub const DEFAULT_HORIZON: usize = 5;

const DIV_EPS: f64 = 1e-12;

/// Scores of `expr` for every (stock, day) of `panel`.
pub fn evaluate(expr: &AlphaExpr, panel: &Panel) -> ScoreMatrix {
    match expr {
        AlphaExpr::Feature(f) => panel.feature(*f).clone(),
        AlphaExpr::Const(c) => Matrix::filled(panel.n_stocks(), panel.n_days(), *c),
        AlphaExpr::Call { op, args, window } => {
            let vals: Vec<Matrix> = args.iter().map(|a| evaluate(a, panel)).collect();
            match (op.kind().is_rolling(), window) {
                (true, Some(w)) => rolling(*op, &vals, *w as usize),
                _ => pointwise(*op, &vals),
            }
        }
    }
}

fn pointwise(op: Op, v: &[Matrix]) -> Matrix {
    match op {
        Op::Neg => v[0].map(|x| -x),
        Op::Abs => v[0].map(f64::abs),
        Op::Log1pSigned => v[0].map(|x| x.signum() * x.abs().ln_1p()),
        Op::Sign => v[0].map(|x| {
            if x.is_nan() {
                f64::NAN
            } else if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        Op::Inv => v[0].map(|x| if x.abs() < DIV_EPS { f64::NAN } else { 1.0 / x }),
        Op::Add => v[0].zip_map(&v[1], |a, b| a + b),
        Op::Sub => v[0].zip_map(&v[1], |a, b| a - b),
        Op::Mul => v[0].zip_map(&v[1], |a, b| a * b),
        Op::DivSafe => v[0].zip_map(&v[1], |a, b| if b.abs() < DIV_EPS { f64::NAN } else { a / b }),
        // f64::max ignores NaN, missing must propagate
        Op::Max => v[0].zip_map(&v[1], |a, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) }),
        Op::Min => v[0].zip_map(&v[1], |a, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.min(b) }),
        Op::PowSigned => v[0].zip_map(&v[1], |a, b| a.signum() * a.abs().powf(b)),
        Op::CsRank => cs_rank(&v[0]),
        _ => unreachable!("{op:?} is rolling"),
    }
}

fn cs_rank(m: &Matrix) -> Matrix {
    let mut out = Matrix::missing(m.rows(), m.cols());
    for t in 0..m.cols() {
        let present: Vec<(usize, f64)> = (0..m.rows())
            .filter_map(|i| m.get(i, t).map(|v| (i, v)))
            .collect();
        if present.is_empty() {
            continue;
        }
        let values: Vec<f64> = present.iter().map(|p| p.1).collect();
        let ranks = average_ranks(&values);
        let denom = (present.len() - 1) as f64;
        for ((i, _), r) in present.iter().zip(ranks) {
            out.set(*i, t, if denom == 0.0 { 0.5 } else { (r - 1.0) / denom });
        }
    }
    out
}

fn rolling(op: Op, v: &[Matrix], w: usize) -> Matrix {
    let (rows, cols) = v[0].shape();
    let need = op.history(w);
    let mut out = Matrix::missing(rows, cols);
    for i in 0..rows {
        let x = v[0].row(i);
        let y = v.get(1).map(|m| m.row(i));
        for t in (need - 1)..cols {
            let lo = t + 1 - need;
            let value = match op {
                Op::TsDelay => x[lo],
                Op::TsDelta => x[t] - x[lo],
                _ => {
                    let win = &x[lo..=t];
                    if win.iter().any(|a| a.is_nan()) {
                        continue;
                    }
                    match op {
                        Op::TsMean => win.iter().sum::<f64>() / w as f64,
                        Op::TsSum => win.iter().sum(),
                        Op::TsStd => {
                            let mean = win.iter().sum::<f64>() / w as f64;
                            (win.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / w as f64).sqrt()
                        }
                        Op::TsMin => win.iter().copied().fold(f64::INFINITY, f64::min),
                        Op::TsMax => win.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                        Op::TsRank => {
                            if w == 1 {
                                0.5
                            } else {
                                let cur = x[t];
                                let less = win.iter().filter(|&&a| a < cur).count() as f64;
                                let equal = win.iter().filter(|&&a| a == cur).count() as f64;
                                // average rank of x[t] is less + (equal + 1) / 2
                                (less + (equal - 1.0) / 2.0) / (w - 1) as f64
                            }
                        }
                        Op::TsCorr | Op::TsCov => {
                            let yw = &y.expect("binary rolling op")[lo..=t];
                            if yw.iter().any(|a| a.is_nan()) {
                                continue;
                            }
                            if op == Op::TsCorr {
                                match pearson(win, yw) {
                                    Some(c) => c,
                                    None => continue,
                                }
                            } else {
                                let mx = win.iter().sum::<f64>() / w as f64;
                                let my = yw.iter().sum::<f64>() / w as f64;
                                win.iter().zip(yw).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / w as f64
                            }
                        }
                        _ => unreachable!("{op:?} is not rolling"),
                    }
                }
            };
            out.set(i, t, value);
        }
    }
    out
}

/// `close[t + horizon] / close[t] - 1`, missing where either price is.
pub fn forward_returns(panel: &Panel, horizon: usize) -> ReturnMatrix {
    assert!(horizon >= 1, "horizon must be positive");
    let close = panel.close();
    let (rows, cols) = close.shape();
    let mut out = Matrix::missing(rows, cols);
    for i in 0..rows {
        for t in 0..cols.saturating_sub(horizon) {
            out.set(i, t, close.at(i, t + horizon) / close.at(i, t) - 1.0);
        }
    }
    out
}

/// Fitness of one expression on one data split.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitnessReport {
    pub ic: Option<f64>,
    pub rank_ic: Option<f64>,
    pub valid_day_count: usize,
    pub mean_cross_sectional_coverage: f64,
    pub expression_text: String,
}

impl FitnessReport {
    /// Selection key: IC, with missing ordered below any value.
    pub fn key(&self) -> f64 {
        self.ic.unwrap_or(f64::NEG_INFINITY)
    }
}

/// Evaluates `expr` on `panel` and scores it against `horizon`-day forward
/// returns over the panel's metric range.
pub fn fitness(expr: &AlphaExpr, panel: &Panel, horizon: usize) -> FitnessReport {
    let scores = evaluate(expr, panel);
    let returns = forward_returns(panel, horizon);
    report_from_scores(&scores, &returns, panel.metric_range(), expr.to_string())
}

pub fn report_from_scores(
    scores: &ScoreMatrix,
    returns: &ReturnMatrix,
    days: Range<usize>,
    expression_text: String,
) -> FitnessReport {
    let pearson_days = DailyCorrelations::compute(scores, returns, days.clone(), false);
    let rank_days = DailyCorrelations::compute(scores, returns, days.clone(), true);
    let coverage = if days.is_empty() || scores.rows() == 0 {
        0.0
    } else {
        let n = scores.rows() as f64;
        days.clone()
            .map(|t| (0..scores.rows()).filter(|&i| scores.get(i, t).is_some()).count() as f64 / n)
            .sum::<f64>()
            / days.len() as f64
    };
    FitnessReport {
        ic: pearson_days.mean(),
        rank_ic: rank_days.mean(),
        valid_day_count: pearson_days.valid_days(),
        mean_cross_sectional_coverage: coverage,
        expression_text,
    }
}
