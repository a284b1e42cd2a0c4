//! Symbol-level genetic programming over the expression language.
//!
//! Uses the same cache, budget accounting and run log as the LLM-driven search.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SplitPanels;
use crate::dsl::{random_expr_with, AlphaExpr, OperatorTable, CONST_LIMIT, MAX_EXPR_DEPTH, MAX_WINDOW};
use crate::evolution::runlog::{
    BestRecord, EvaluationRecord, GenerationRecord, LogRecord, RankedEntry, RunEnd, RunLog, RunStart, RunStatus,
    SelectionRecord,
};
use crate::evolution::select::{select_indices, RankKey};
use crate::evolution::{ConfigError, ConvergencePoint, EvalStatus, Evaluation, Evaluator};

const RETRIES: usize = 5;
const WINDOW_STEPS: [i32; 3] = [1, 2, 5];

/// Subtree crossover: a uniformly chosen subtree of `e1` is replaced by a
/// uniformly chosen subtree of `e2`. Falls back to `e1` when five attempts
/// all break the size caps.
pub fn gp_crossover<R: Rng + ?Sized>(e1: &AlphaExpr, e2: &AlphaExpr, rng: &mut R) -> AlphaExpr {
    let (p1, p2) = (e1.paths(), e2.paths());
    for _ in 0..RETRIES {
        let at = &p1[rng.random_range(0..p1.len())];
        let donor = e2.get(&p2[rng.random_range(0..p2.len())]).expect("path from paths()");
        let child = e1.replaced(at, donor.clone());
        if child.validate().is_ok() {
            return child;
        }
    }
    e1.clone()
}

/// Point mutation at a uniformly chosen node: constants get a multiplicative
/// jitter, windows a small shift, and otherwise the subtree is regrown.
pub fn gp_mutation<R: Rng + ?Sized>(e: &AlphaExpr, rng: &mut R, max_depth: usize) -> AlphaExpr {
    gp_mutation_with(e, rng, max_depth, OperatorTable::standard())
}

pub fn gp_mutation_with<R: Rng + ?Sized>(e: &AlphaExpr, rng: &mut R, max_depth: usize, table: &OperatorTable) -> AlphaExpr {
    let paths = e.paths();
    for _ in 0..RETRIES {
        let at = &paths[rng.random_range(0..paths.len())];
        let node = e.get(at).expect("path from paths()");
        let replacement = match node {
            AlphaExpr::Const(c) if rng.random_bool(0.5) => {
                let factor: f64 = rng.random_range(0.5..=2.0);
                AlphaExpr::Const((c * factor).clamp(-CONST_LIMIT, CONST_LIMIT))
            }
            AlphaExpr::Call {
                op,
                args,
                window: Some(w),
            } if rng.random_bool(0.5) => {
                let step = WINDOW_STEPS[rng.random_range(0..WINDOW_STEPS.len())];
                let step = if rng.random_bool(0.5) { step } else { -step };
                let w = (*w as i32 + step).clamp(1, MAX_WINDOW as i32) as u16;
                AlphaExpr::rolling(*op, args.clone(), w)
            }
            _ => {
                let room = MAX_EXPR_DEPTH.saturating_sub(at.len()).max(1);
                random_expr_with(rng, max_depth.clamp(1, room), table)
            }
        };
        let child = e.replaced(at, replacement);
        if child.validate_with(table).is_ok() {
            return child;
        }
    }
    e.clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub population_size: usize,
    pub evaluation_budget: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub tournament_size: usize,
    pub elitism: usize,
    pub init_max_depth: usize,
    pub mutation_max_depth: usize,
    pub seed: u64,
    pub horizon: usize,
    /// Stop after this many consecutive generations without a new evaluation.
    pub max_stalled_generations: u32,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population_size: 50,
            evaluation_budget: 2000,
            crossover_prob: 0.7,
            mutation_prob: 0.25,
            tournament_size: 3,
            elitism: 1,
            init_max_depth: 4,
            mutation_max_depth: 3,
            seed: 0,
            horizon: crate::eval::DEFAULT_HORIZON,
            max_stalled_generations: 20,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError(m));
        for (name, p) in [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.crossover_prob + self.mutation_prob > 1.0 + 1e-12 {
            return bad("crossover_prob + mutation_prob must not exceed 1".into());
        }
        if self.population_size < 2 {
            return bad("population_size must be at least 2".into());
        }
        if self.evaluation_budget < self.population_size {
            return bad(format!(
                "evaluation_budget {} is smaller than population_size {}",
                self.evaluation_budget, self.population_size
            ));
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be positive".into());
        }
        if self.elitism >= self.population_size {
            return bad("elitism must be smaller than population_size".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Member {
    expr: AlphaExpr,
    text: String,
    evaluation: Arc<Evaluation>,
    generation: u32,
}

impl Member {
    fn key(&self) -> RankKey<'_> {
        RankKey {
            ic: self.evaluation.train.ic,
            complexity: self.expr.complexity(),
            generation: self.generation,
            expression: &self.text,
        }
    }

    fn validation_key(&self) -> RankKey<'_> {
        RankKey {
            ic: self.evaluation.validation.ic,
            ..self.key()
        }
    }
}

#[derive(Debug)]
pub struct GpResult {
    pub best: Option<BestRecord>,
    pub best_expression: Option<AlphaExpr>,
    pub convergence: Vec<ConvergencePoint>,
    pub evaluations_used: usize,
    pub generations: u32,
    pub log: RunLog,
}

fn tournament<'a, R: Rng + ?Sized>(pop: &'a [Member], size: usize, rng: &mut R) -> &'a Member {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..size {
        let c = &pop[rng.random_range(0..pop.len())];
        if c.key().rank_cmp(&best.key()).is_lt() {
            best = c;
        }
    }
    best
}

/// Evaluates `exprs`, logs every slot, and returns the evaluated members.
fn evaluate_into(
    evaluator: &mut Evaluator<'_>,
    log: &mut RunLog,
    exprs: Vec<AlphaExpr>,
    generation: u32,
    history: &mut Vec<Member>,
) -> (Vec<Member>, usize) {
    let results = evaluator.evaluate_batch(&exprs);
    let mut out = Vec::new();
    let mut fresh = 0;
    for (expr, r) in exprs.into_iter().zip(results) {
        let text = expr.to_string();
        log.push(LogRecord::Evaluation(EvaluationRecord {
            generation,
            thought: None,
            expression: text.clone(),
            complexity: expr.complexity(),
            status: r.status,
            evals_used: r.evals_used,
            train: r.evaluation.as_ref().map(|e| e.train.clone()),
            validation: r.evaluation.as_ref().map(|e| e.validation.clone()),
        }));
        if let Some(evaluation) = r.evaluation {
            let m = Member {
                expr,
                text,
                evaluation,
                generation,
            };
            if r.status == EvalStatus::Fresh {
                fresh += 1;
                history.push(m.clone());
            }
            out.push(m);
        }
    }
    (out, fresh)
}

/// Tournament GP with elitism. Fitness is train IC; the reported best is
/// chosen by validation IC among every evaluated expression.
pub fn run_gp(config: &GpConfig, splits: &SplitPanels, mut log: RunLog, label: &str) -> Result<GpResult, ConfigError> {
    config.validate()?;
    let table = OperatorTable::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut evaluator = Evaluator::new(splits, config.horizon, config.evaluation_budget);
    let n = config.population_size;
    log.push(LogRecord::RunStart(RunStart {
        engine: "gp".into(),
        label: label.into(),
        seed: config.seed,
        population_size: n,
        evaluation_budget: config.evaluation_budget,
        config: serde_json::to_value(config).expect("config serializes"),
    }));

    let mut history: Vec<Member> = Vec::new();
    let mut population: Vec<Member> = Vec::new();
    // ramped initial depths; duplicates are free cache hits, so bound the draws
    let mut draws = 0;
    while population.len() < n && draws < 20 * n && evaluator.remaining() > 0 {
        let want = n - population.len();
        let exprs: Vec<AlphaExpr> = (0..want)
            .map(|k| {
                draws += 1;
                let depth = 1 + (population.len() + k) % config.init_max_depth.max(1);
                random_expr_with(&mut rng, depth.max(2), table)
            })
            .collect();
        let (members, _) = evaluate_into(&mut evaluator, &mut log, exprs, 0, &mut history);
        for m in members {
            if !population.iter().any(|p| p.text == m.text) {
                population.push(m);
            }
        }
    }
    log_generation(&mut log, 0, &population, &evaluator, history.len(), n);

    let mut generation = 0u32;
    let mut stalled = 0u32;
    let stop = loop {
        if evaluator.remaining() == 0 {
            break "budget_exhausted";
        }
        if stalled >= config.max_stalled_generations {
            break "stalled";
        }
        if population.is_empty() {
            break "empty_population";
        }
        generation += 1;
        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|&a, &b| population[a].key().rank_cmp(&population[b].key()));
        let elites: Vec<Member> = ranked.iter().take(config.elitism).map(|&k| population[k].clone()).collect();

        let mut exprs = Vec::with_capacity(n - elites.len());
        for _ in 0..n - elites.len() {
            let r: f64 = rng.random();
            let child = if r < config.crossover_prob {
                let a = tournament(&population, config.tournament_size, &mut rng).expr.clone();
                let b = tournament(&population, config.tournament_size, &mut rng).expr.clone();
                gp_crossover(&a, &b, &mut rng)
            } else if r < config.crossover_prob + config.mutation_prob {
                let a = tournament(&population, config.tournament_size, &mut rng).expr.clone();
                gp_mutation_with(&a, &mut rng, config.mutation_max_depth, table)
            } else {
                tournament(&population, config.tournament_size, &mut rng).expr.clone()
            };
            exprs.push(child);
        }
        let before = history.len();
        let (offspring, fresh) = evaluate_into(&mut evaluator, &mut log, exprs, generation, &mut history);
        debug_assert_eq!(history.len() - before, fresh);
        stalled = if fresh == 0 { stalled + 1 } else { 0 };
        population = elites.into_iter().chain(offspring).collect();
        log_generation(&mut log, generation, &population, &evaluator, fresh, n);
    };

    let best_member = {
        let keys: Vec<RankKey<'_>> = history.iter().map(Member::validation_key).collect();
        select_indices(&keys, 1).first().map(|&k| history[k].clone())
    };
    let best = best_member.as_ref().map(|m| BestRecord {
        id: None,
        expression: m.text.clone(),
        generation: m.generation,
        train: m.evaluation.train.clone(),
        validation: m.evaluation.validation.clone(),
        test: evaluator.test_report(&m.expr),
    });
    log.push(LogRecord::RunEnd(RunEnd {
        status: RunStatus::Completed,
        reason: None,
        stop: stop.into(),
        evaluations_used: evaluator.used(),
        generations: generation,
        llm_calls: 0,
        best: best.clone(),
    }));
    Ok(GpResult {
        best,
        best_expression: best_member.map(|m| m.expr),
        convergence: evaluator.convergence().to_vec(),
        evaluations_used: evaluator.used(),
        generations: generation,
        log,
    })
}

fn log_generation(log: &mut RunLog, generation: u32, population: &[Member], evaluator: &Evaluator<'_>, fresh: usize, target: usize) {
    let keys: Vec<RankKey<'_>> = population.iter().map(Member::key).collect();
    let order = select_indices(&keys, population.len());
    let ics: Vec<f64> = population.iter().filter_map(|m| m.evaluation.train.ic).collect();
    let survivors: Vec<String> = order.iter().map(|&k| population[k].text.clone()).collect();
    log.push(LogRecord::Selection(SelectionRecord {
        generation,
        target,
        pool: order
            .iter()
            .map(|&k| {
                let m = &population[k];
                RankedEntry {
                    id: m.text.clone(),
                    train_ic: m.evaluation.train.ic,
                    complexity: m.expr.complexity(),
                    generation: m.generation,
                    expression: m.text.clone(),
                }
            })
            .collect(),
        survivors: survivors.clone(),
    }));
    log.push(LogRecord::Generation(GenerationRecord {
        generation,
        attempted: BTreeMap::new(),
        accepted: BTreeMap::new(),
        evaluations_used: evaluator.used(),
        new_evaluations: fresh,
        best_train_ic: ics.iter().copied().reduce(f64::max),
        mean_train_ic: (!ics.is_empty()).then(|| ics.iter().sum::<f64>() / ics.len() as f64),
        best_validation_ic: evaluator.convergence().last().and_then(|p| p.best_validation_ic),
        survivors,
    }));
}
