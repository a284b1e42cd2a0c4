//! Daily Top-K / Drop-M rebalancing against an equal-weight benchmark.
//!
//! Stocks are ranked on day `t` and the return is realized from the close of
//! `t` to the close of `t + 1`. A stock is eligible on day `t` when its score
//! and its close on `t` are present. Held stocks that lose eligibility are
//! sold; a held stock with no close on `t + 1` contributes a zero return that
//! day and is then force-exited. Sold stocks may be bought back later.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::AlphaExpr;
use crate::eval::evaluate;
use crate::panel::{Matrix, Panel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub top_k: usize,
    pub drop_m: usize,
    /// Cost per unit of traded weight, in basis points.
    pub cost_bps: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            top_k: 50,
            drop_m: 5,
            cost_bps: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BacktestError {
    #[error("top_k must be positive")]
    ZeroTopK,
    #[error("drop_m must be positive")]
    ZeroDrop,
    #[error("drop_m {drop_m} exceeds top_k {top_k}")]
    DropExceedsTopK { top_k: usize, drop_m: usize },
    #[error("cost_bps must be finite and non-negative")]
    BadCost,
    #[error("scores have shape {found:?}, panel has {expected:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("need at least two metric days, found {0}")]
    TooShort(usize),
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        if self.top_k == 0 {
            return Err(BacktestError::ZeroTopK);
        }
        if self.drop_m == 0 {
            return Err(BacktestError::ZeroDrop);
        }
        if self.drop_m > self.top_k {
            return Err(BacktestError::DropExceedsTopK {
                top_k: self.top_k,
                drop_m: self.drop_m,
            });
        }
        if !(self.cost_bps.is_finite() && self.cost_bps >= 0.0) {
            return Err(BacktestError::BadCost);
        }
        Ok(())
    }
}

/// Cumulative compounded return per date, starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl EquityCurve {
    fn from_returns(dates: Vec<NaiveDate>, returns: &[f64]) -> Self {
        let mut values = Vec::with_capacity(returns.len() + 1);
        let mut growth = 1.0;
        values.push(0.0);
        for r in returns {
            growth *= 1.0 + r;
            values.push(growth - 1.0);
        }
        EquityCurve { dates, values }
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }

    pub fn max_drawdown(&self) -> f64 {
        let mut peak = 1.0f64;
        let mut worst = 0.0f64;
        for v in &self.values {
            let g = 1.0 + v;
            peak = peak.max(g);
            worst = worst.max(1.0 - g / peak);
        }
        worst
    }
}

/// Holdings after a rebalance, as stock indices in ascending order, equally weighted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub holdings: Vec<usize>,
}

impl PortfolioState {
    pub fn weight(&self) -> f64 {
        if self.holdings.is_empty() {
            0.0
        } else {
            1.0 / self.holdings.len() as f64
        }
    }

    /// Sum of absolute weight changes between two equal-weight portfolios.
    pub fn traded_weight(&self, next: &PortfolioState) -> f64 {
        let (wa, wb) = (self.weight(), next.weight());
        let mut total = 0.0;
        for i in &self.holdings {
            total += if next.holdings.binary_search(i).is_ok() { (wa - wb).abs() } else { wa };
        }
        for i in &next.holdings {
            if self.holdings.binary_search(i).is_err() {
                total += wb;
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub strategy: EquityCurve,
    pub benchmark: EquityCurve,
    pub daily_returns: Vec<f64>,
    pub benchmark_returns: Vec<f64>,
    /// Traded weight per rebalance.
    pub turnover: Vec<f64>,
    pub holdings: Vec<PortfolioState>,
}

impl BacktestResult {
    pub fn excess_terminal(&self) -> f64 {
        self.strategy.terminal() - self.benchmark.terminal()
    }

    /// Annualized mean over standard deviation of daily excess returns.
    pub fn information_ratio(&self) -> Option<f64> {
        let ex: Vec<f64> = self.daily_returns.iter().zip(&self.benchmark_returns).map(|(a, b)| a - b).collect();
        if ex.len() < 2 {
            return None;
        }
        let n = ex.len() as f64;
        let mean = ex.iter().sum::<f64>() / n;
        let var = ex.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var > 0.0).then(|| mean / var.sqrt() * 252f64.sqrt())
    }
}

/// Stocks ordered best first: score descending, then ticker ascending.
fn ranking(scores: &Matrix, close: &Matrix, tickers: &[String], t: usize) -> Vec<usize> {
    let mut eligible: Vec<usize> =
        (0..scores.rows()).filter(|&i| !scores.at(i, t).is_nan() && !close.at(i, t).is_nan()).collect();
    eligible.sort_by(|&a, &b| scores.at(b, t).total_cmp(&scores.at(a, t)).then_with(|| tickers[a].cmp(&tickers[b])));
    eligible
}

/// One Top-K / Drop-M rebalance given the day's ranking.
///
/// Held stocks missing from `ranked` are sold outright. Of the rest, those in
/// the bottom `drop_m` of held-plus-candidates are sold, where candidates are
/// the best non-held stocks. Freed slots are filled from the candidates in rank order.
pub fn rebalance(prev: &PortfolioState, ranked: &[usize], config: &BacktestConfig) -> PortfolioState {
    let k = config.top_k;
    let pos: std::collections::HashMap<usize, usize> = ranked.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let mut held: Vec<usize> = prev.holdings.iter().copied().filter(|i| pos.contains_key(i)).collect();
    held.sort_by_key(|i| pos[i]);
    let open = k.saturating_sub(held.len());
    let candidates: Vec<usize> =
        ranked.iter().copied().filter(|i| !held.contains(i)).take(open + config.drop_m).collect();

    let mut combined: Vec<usize> = held.iter().chain(&candidates).copied().collect();
    combined.sort_by_key(|i| pos[i]);
    let cutoff = combined.len().saturating_sub(config.drop_m);
    let bottom: Vec<usize> = combined[cutoff..].to_vec();
    let sold: Vec<usize> = if held.len() + candidates.len() > k { held.iter().copied().filter(|i| bottom.contains(i)).collect() } else { Vec::new() };

    let mut next: Vec<usize> = held.iter().copied().filter(|i| !sold.contains(i)).collect();
    let room = k.saturating_sub(next.len());
    next.extend(candidates.iter().copied().take(room));
    next.sort_unstable();
    PortfolioState { holdings: next }
}

fn day_return(close: &Matrix, i: usize, t: usize) -> Option<f64> {
    let (a, b) = (close.at(i, t), close.at(i, t + 1));
    (!a.is_nan() && !b.is_nan()).then(|| b / a - 1.0)
}

/// Runs the strategy over the panel's metric days. `scores` must share the panel's shape.
pub fn run_backtest(scores: &Matrix, panel: &Panel, config: &BacktestConfig) -> Result<BacktestResult, BacktestError> {
    config.validate()?;
    let expected = (panel.n_stocks(), panel.n_days());
    if scores.shape() != expected {
        return Err(BacktestError::Shape {
            expected,
            found: scores.shape(),
        });
    }
    let range = panel.metric_range();
    if range.len() < 2 {
        return Err(BacktestError::TooShort(range.len()));
    }
    let close = panel.close();
    let cost = config.cost_bps / 1e4;
    let mut state = PortfolioState::default();
    let mut daily_returns = Vec::new();
    let mut turnover = Vec::new();
    let mut holdings = Vec::new();
    let mut force_exit: Vec<usize> = Vec::new();

    for t in range.start..range.end - 1 {
        let mut ranked = ranking(scores, close, panel.tickers(), t);
        ranked.retain(|i| !force_exit.contains(i));
        if ranked.len() < config.top_k {
            log::info!("{}: {} eligible stocks, holding fewer than {}", panel.dates()[t], ranked.len(), config.top_k);
        }
        let next = rebalance(&state, &ranked, config);
        let traded = state.traded_weight(&next);
        let w = next.weight();
        force_exit.clear();
        let mut r = 0.0;
        for &i in &next.holdings {
            match day_return(close, i, t) {
                Some(x) => r += w * x,
                None => force_exit.push(i),
            }
        }
        // a stock whose next close is missing is exited; it may re-enter once data resumes
        daily_returns.push(r - cost * traded);
        turnover.push(traded);
        holdings.push(next.clone());
        state = next;
        state.holdings.retain(|i| !force_exit.contains(i));
    }

    let benchmark_returns = benchmark_returns(panel);
    let dates = panel.metric_dates().to_vec();
    Ok(BacktestResult {
        strategy: EquityCurve::from_returns(dates.clone(), &daily_returns),
        benchmark: EquityCurve::from_returns(dates, &benchmark_returns),
        daily_returns,
        benchmark_returns,
        turnover,
        holdings,
    })
}

/// Equal weight over stocks with a close on `t`; a missing close on `t + 1` counts as zero.
pub fn benchmark_returns(panel: &Panel) -> Vec<f64> {
    let close = panel.close();
    let range = panel.metric_range();
    (range.start..range.end.saturating_sub(1))
        .map(|t| {
            let live: Vec<usize> = (0..close.rows()).filter(|&i| !close.at(i, t).is_nan()).collect();
            if live.is_empty() {
                return 0.0;
            }
            live.iter().map(|&i| day_return(close, i, t).unwrap_or(0.0)).sum::<f64>() / live.len() as f64
        })
        .collect()
}

pub fn benchmark_curve(panel: &Panel) -> EquityCurve {
    EquityCurve::from_returns(panel.metric_dates().to_vec(), &benchmark_returns(panel))
}

/// Scores the panel with `expr` and backtests the result.
pub fn backtest_expression(expr: &AlphaExpr, panel: &Panel, config: &BacktestConfig) -> Result<BacktestResult, BacktestError> {
    run_backtest(&evaluate(expr, panel), panel, config)
}

/// Scores equal to the realized next-day return, for sanity checks.
pub fn oracle_scores(panel: &Panel) -> Matrix {
    let close = panel.close();
    let mut m = Matrix::missing(close.rows(), close.cols());
    for i in 0..close.rows() {
        for t in 0..close.cols().saturating_sub(1) {
            if let Some(r) = day_return(close, i, t) {
                m.set(i, t, r);
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_panel;
    use crate::dsl::Feature;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn panel_from_close(close: Vec<Vec<f64>>) -> Panel {
        let n = close.len();
        let days = close[0].len();
        let m = Matrix::from_raw_rows(&close);
        let fill = Matrix::filled(n, days, 1.0);
        let mut features = vec![fill; 6];
        features[Feature::Close.index()] = m;
        let tickers = (0..n).map(|i| format!("S{i:02}")).collect();
        let dates = crate::data::business_days(NaiveDate::from_ymd_opt(2021, 1, 4).unwrap(), days);
        Panel::new(tickers, dates, features).unwrap()
    }

    #[test]
    fn two_stocks_three_days_by_hand() {
        // A: 10 -> 11 -> 11, B: 20 -> 19 -> 21
        let p = panel_from_close(vec![vec![10.0, 11.0, 11.0], vec![20.0, 19.0, 21.0]]);
        let scores = Matrix::from_raw_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let cfg = BacktestConfig {
            top_k: 1,
            drop_m: 1,
            cost_bps: 10.0,
        };
        let r = run_backtest(&scores, &p, &cfg).unwrap();
        assert_eq!(r.holdings[0].holdings, vec![0]);
        assert_eq!(r.holdings[1].holdings, vec![1]);
        assert_eq!(r.turnover, vec![1.0, 2.0]);
        let d0 = 0.1 - 0.001;
        let d1 = 2.0 / 19.0 - 0.002;
        assert_relative_eq!(r.daily_returns[0], d0, epsilon = 1e-15);
        assert_relative_eq!(r.daily_returns[1], d1, epsilon = 1e-15);
        assert_relative_eq!(r.strategy.terminal(), (1.0 + d0) * (1.0 + d1) - 1.0, epsilon = 1e-15);
        let b0 = (0.1 + (-0.05)) / 2.0;
        let b1 = (0.0 + 2.0 / 19.0) / 2.0;
        assert_relative_eq!(r.benchmark.terminal(), (1.0 + b0) * (1.0 + b1) - 1.0, epsilon = 1e-15);
        assert_eq!(r.strategy.values[0], 0.0);
        assert_eq!(r.strategy.values.len(), 3);
    }

    #[test]
    fn drop_limits_daily_replacements() {
        let prev = PortfolioState {
            holdings: vec![0, 1, 2, 3],
        };
        // ranking fully reversed: 7 6 5 4 3 2 1 0
        let ranked: Vec<usize> = (0..8).rev().collect();
        let cfg = BacktestConfig {
            top_k: 4,
            drop_m: 1,
            cost_bps: 0.0,
        };
        let next = rebalance(&prev, &ranked, &cfg);
        assert_eq!(next.holdings, vec![1, 2, 3, 7]);
    }

    #[test]
    fn empty_book_buys_top_k() {
        let ranked = vec![5, 3, 1, 0];
        let cfg = BacktestConfig {
            top_k: 3,
            drop_m: 1,
            cost_bps: 0.0,
        };
        assert_eq!(rebalance(&PortfolioState::default(), &ranked, &cfg).holdings, vec![1, 3, 5]);
    }

    #[test]
    fn missing_data_forces_exit_and_allows_reentry() {
        let nan = f64::NAN;
        let p = panel_from_close(vec![vec![10.0, nan, 10.0, 11.0, 12.0], vec![10.0, 10.0, 10.0, 10.0, 10.0]]);
        let scores = Matrix::filled(2, 5, 1.0);
        let cfg = BacktestConfig {
            top_k: 1,
            drop_m: 1,
            cost_bps: 0.0,
        };
        let r = run_backtest(&scores, &p, &cfg).unwrap();
        // day 0: S00 held, no close on day 1 -> zero return, exit
        assert_eq!(r.holdings[0].holdings, vec![0]);
        assert_eq!(r.daily_returns[0], 0.0);
        assert_eq!(r.holdings[1].holdings, vec![1]);
        // ties break by ticker, so S00 re-enters once it is back
        assert_eq!(r.holdings[2].holdings, vec![0]);
        let scores = Matrix::from_raw_rows(&[vec![1.0; 5], vec![2.0, 2.0, 0.5, 0.5, 0.5]]);
        let r = run_backtest(&scores, &p, &cfg).unwrap();
        assert_eq!(r.holdings[0].holdings, vec![1]);
        assert_eq!(r.holdings[2].holdings, vec![0]);
    }

    #[test]
    fn all_equal_scores_hold_first_tickers() {
        let p = synthetic_panel(3, 30, 60, None);
        let scores = Matrix::filled(30, 60, 0.5);
        let cfg = BacktestConfig {
            top_k: 10,
            drop_m: 3,
            cost_bps: 0.0,
        };
        let r = run_backtest(&scores, &p, &cfg).unwrap();
        let close = p.close();
        let mut growth = 1.0;
        for (t, h) in r.holdings.iter().enumerate() {
            assert_eq!(h.holdings, (0..10).collect::<Vec<_>>());
            let ret: f64 = (0..10).map(|i| close.at(i, t + 1) / close.at(i, t) - 1.0).sum::<f64>() / 10.0;
            growth *= 1.0 + ret;
        }
        assert!((r.strategy.terminal() - (growth - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn oracle_scores_beat_benchmark() {
        let p = synthetic_panel(11, 100, 120, None);
        let r = run_backtest(&oracle_scores(&p), &p, &BacktestConfig::default()).unwrap();
        assert!(r.strategy.terminal() > r.benchmark.terminal());
    }

    #[test]
    fn steady_state_swaps_only_outranked_holdings() {
        let ranked: Vec<usize> = (0..60).collect();
        let cfg = BacktestConfig::default();
        let top = PortfolioState {
            holdings: (0..50).collect(),
        };
        assert_eq!(rebalance(&top, &ranked, &cfg), top);
        // holdings 0..45 plus 53..58: five outsiders (45..50) outrank the five worst held
        let mut held: Vec<usize> = (0..45).collect();
        held.extend(53..58);
        let next = rebalance(&PortfolioState { holdings: held }, &ranked, &cfg);
        assert_eq!(next.holdings, (0..50).collect::<Vec<_>>());
        // two outsiders beat held stocks: only two swaps even though drop_m is 5
        let mut held: Vec<usize> = (0..48).collect();
        held.extend([58, 59]);
        let next = rebalance(&PortfolioState { holdings: held }, &ranked, &cfg);
        assert_eq!(next.holdings, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn degraded_day_holds_every_valid_stock() {
        let ranked: Vec<usize> = (0..40).rev().collect();
        let next = rebalance(&PortfolioState::default(), &ranked, &BacktestConfig::default());
        assert_eq!(next.holdings.len(), 40);
        assert_relative_eq!(next.weight(), 1.0 / 40.0);
    }

    #[test]
    fn zero_returns_give_flat_curves() {
        let p = panel_from_close(vec![vec![5.0; 6], vec![7.0; 6], vec![9.0; 6]]);
        let scores = Matrix::from_raw_rows(&[vec![1.0; 6], vec![2.0; 6], vec![3.0; 6]]);
        let cfg = BacktestConfig {
            top_k: 2,
            drop_m: 1,
            cost_bps: 0.0,
        };
        let r = run_backtest(&scores, &p, &cfg).unwrap();
        assert!(r.strategy.values.iter().all(|v| *v == 0.0));
        assert!(benchmark_curve(&p).values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_stock_benchmark_compounds_its_returns() {
        let close = vec![10.0, 12.0, 9.0, 9.9];
        let p = panel_from_close(vec![close.clone()]);
        let c = benchmark_curve(&p);
        let expect = [0.0, 0.2, -0.1, -0.01];
        for (a, b) in c.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_stock_curve_is_its_compounded_return() {
        let p = synthetic_panel(21, 8, 40, None);
        let mut scores = Matrix::filled(8, 40, 0.0);
        for t in 0..40 {
            scores.set(3, t, 1.0);
        }
        let cfg = BacktestConfig {
            top_k: 1,
            drop_m: 1,
            cost_bps: 0.0,
        };
        let r = run_backtest(&scores, &p, &cfg).unwrap();
        let close = p.close();
        for (k, v) in r.strategy.values.iter().enumerate() {
            assert!((v - (close.at(3, k) / close.at(3, 0) - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_sum_to_one_or_zero() {
        let s = PortfolioState { holdings: vec![1, 4, 9] };
        assert_relative_eq!(s.weight() * s.holdings.len() as f64, 1.0);
        assert_eq!(PortfolioState::default().weight(), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(BacktestConfig::default().validate().is_ok());
        let bad = BacktestConfig {
            top_k: 2,
            drop_m: 3,
            cost_bps: 0.0,
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn no_lookahead(seed in 0u64..1000, cut in 2usize..38) {
            let p = synthetic_panel(seed, 12, 40, None);
            let scores = crate::eval::evaluate(&crate::dsl::parse("ts_delta(close, 3)").unwrap(), &p);
            let cfg = BacktestConfig { top_k: 4, drop_m: 2, cost_bps: 5.0 };
            let base = run_backtest(&scores, &p, &cfg).unwrap();
            // perturb scores and prices strictly after day `cut`
            let mut s2 = scores.clone();
            let mut c2 = p.close().clone();
            for i in 0..12 {
                for t in cut + 1..40 {
                    s2.set(i, t, (i * 31 + t * 7) as f64 % 5.0);
                    c2.set(i, t, 1.0 + ((i + t) % 3) as f64);
                }
            }
            let p2 = p.with_feature(Feature::Close, c2).unwrap();
            let other = run_backtest(&s2, &p2, &cfg).unwrap();
            // the curve at index k depends on closes up to k and scores up to k - 1
            prop_assert_eq!(&base.strategy.values[..=cut], &other.strategy.values[..=cut]);
            prop_assert_eq!(&base.holdings[..cut], &other.holdings[..cut]);
            // with prices untouched, scores after `cut` cannot reach the curve through cut + 1
            let scores_only = run_backtest(&s2, &p, &cfg).unwrap();
            prop_assert_eq!(&base.strategy.values[..=cut + 1], &scores_only.strategy.values[..=cut + 1]);
        }

        #[test]
        fn holdings_never_exceed_k(seed in 0u64..1000, k in 1usize..8, m in 1usize..4) {
            let m = m.min(k);
            let p = synthetic_panel(seed, 15, 30, None);
            let scores = crate::eval::evaluate(&crate::dsl::parse("ts_mean(volume, 5)").unwrap(), &p);
            let cfg = BacktestConfig { top_k: k, drop_m: m, cost_bps: 0.0 };
            let r = run_backtest(&scores, &p, &cfg).unwrap();
            for (t, h) in r.holdings.iter().enumerate() {
                prop_assert!(h.holdings.len() <= k);
                if t > 0 {
                    let prev = &r.holdings[t - 1].holdings;
                    let sold = prev.iter().filter(|i| !h.holdings.contains(i)).count();
                    prop_assert!(sold <= m);
                }
            }
        }
    }
}
