use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use treevo_bench::{bench_panel, EXPRESSIONS};
use treevo_core::backtest::{run_backtest, BacktestConfig};
use treevo_core::dsl::random_expr;
use treevo_core::eval::{evaluate, forward_returns, ic, rank_ic};
use treevo_core::parse;

fn bench_evaluate(c: &mut Criterion) {
    let panel = bench_panel();
    let mut g = c.benchmark_group("evaluate");
    for (k, text) in EXPRESSIONS.iter().enumerate() {
        let expr = parse(text).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(k), &expr, |b, e| b.iter(|| evaluate(black_box(e), &panel)));
    }
    g.finish();
}

fn bench_ic(c: &mut Criterion) {
    let panel = bench_panel();
    let scores = evaluate(&parse(EXPRESSIONS[2]).unwrap(), &panel);
    let fwd = forward_returns(&panel, 5);
    c.bench_function("ic", |b| b.iter(|| ic(black_box(&scores), &fwd)));
    c.bench_function("rank_ic", |b| b.iter(|| rank_ic(black_box(&scores), &fwd)));
}

fn bench_parse(c: &mut Criterion) {
    let texts: Vec<String> = (0..200).map(|s| random_expr(s, 5).to_string()).collect();
    c.bench_function("parse_200", |b| {
        b.iter(|| {
            for t in &texts {
                black_box(parse(t).unwrap());
            }
        })
    });
}

fn bench_backtest(c: &mut Criterion) {
    let panel = bench_panel();
    let scores = evaluate(&parse(EXPRESSIONS[0]).unwrap(), &panel);
    let cfg = BacktestConfig::default();
    c.bench_function("backtest_top50_drop5", |b| b.iter(|| run_backtest(black_box(&scores), &panel, &cfg).unwrap()));
}

criterion_group!(benches, bench_evaluate, bench_ic, bench_parse, bench_backtest);
criterion_main!(benches);
