//! Daily cross-sectional correlation metrics.
//!
//! IC is the mean over valid days of the Pearson correlation between scores
//! and forward returns across stocks. RankIC is the same statistic computed
//! on within-day average ranks. A day is valid when at least two stocks have
//! both values present and neither cross-section is constant.

use std::ops::Range;

use crate::panel::Matrix;

/// 1-based ranks, ties receiving the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut k = 0;
    while k < order.len() {
        let mut j = k;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[k]] {
            j += 1;
        }
        let avg = (k + j) as f64 / 2.0 + 1.0;
        for &idx in &order[k..=j] {
            ranks[idx] = avg;
        }
        k = j + 1;
    }
    ranks
}

fn is_constant(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

/// Pearson correlation; `None` for fewer than two points or a constant side.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    debug_assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 || is_constant(xs) || is_constant(ys) {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let denom = (sxx * syy).sqrt();
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    Some((sxy / denom).clamp(-1.0, 1.0))
}

/// Per-day correlations over a range of day columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyCorrelations {
    /// One entry per day in the range; `None` for days that fail validity.
    pub days: Vec<Option<f64>>,
}

impl DailyCorrelations {
    pub fn compute(z: &Matrix, f: &Matrix, days: Range<usize>, ranked: bool) -> Self {
        assert_eq!(z.shape(), f.shape(), "score and return axes differ");
        let mut xs = Vec::with_capacity(z.rows());
        let mut ys = Vec::with_capacity(z.rows());
        let days = days
            .map(|t| {
                xs.clear();
                ys.clear();
                for i in 0..z.rows() {
                    let (a, b) = (z.at(i, t), f.at(i, t));
                    if !a.is_nan() && !b.is_nan() {
                        xs.push(a);
                        ys.push(b);
                    }
                }
                if ranked {
                    pearson(&average_ranks(&xs), &average_ranks(&ys))
                } else {
                    pearson(&xs, &ys)
                }
            })
            .collect();
        DailyCorrelations { days }
    }

    pub fn valid_days(&self) -> usize {
        self.days.iter().flatten().count()
    }

    pub fn mean(&self) -> Option<f64> {
        let n = self.valid_days();
        (n > 0).then(|| self.days.iter().flatten().sum::<f64>() / n as f64)
    }
}

pub fn ic(z: &Matrix, f: &Matrix) -> Option<f64> {
    ic_over(z, f, 0..z.cols())
}

pub fn ic_over(z: &Matrix, f: &Matrix, days: Range<usize>) -> Option<f64> {
    DailyCorrelations::compute(z, f, days, false).mean()
}

pub fn rank_ic(z: &Matrix, f: &Matrix) -> Option<f64> {
    rank_ic_over(z, f, 0..z.cols())
}

pub fn rank_ic_over(z: &Matrix, f: &Matrix, days: Range<usize>) -> Option<f64> {
    DailyCorrelations::compute(z, f, days, true).mean()
}
