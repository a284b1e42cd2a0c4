//! Shared inputs for the criterion benches.

use treevo_core::data::synthetic_panel;
use treevo_core::Panel;

/// A panel the size of a mid-cap universe over two years.
pub fn bench_panel() -> Panel {
    synthetic_panel(42, 300, 500, None)
}

pub const EXPRESSIONS: [&str; 3] = [
    "cs_rank(ts_delta(close, 5))",
    "ts_corr(cs_rank(volume), cs_rank(vwap), 10) * -1",
    "div_safe(ts_mean(close, 5) - ts_mean(close, 20), ts_std(close, 20)) + ts_rank(volume, 10)",
];
