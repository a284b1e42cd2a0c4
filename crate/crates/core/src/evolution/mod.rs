//! The LLM-driven search over thought trees.
//!
//! Each generation applies every configured operator `N` times, grounds the
//! accepted children into expressions, evaluates them under the shared budget,
//! and keeps the `N` best by train IC. The reported best is chosen by
//! validation IC among everything evaluated.

pub mod budget;
pub mod runlog;
pub mod select;

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use budget::{ConvergencePoint, EvalCache, EvalResult, EvalStatus, Evaluation, Evaluator};
pub use runlog::{LogRecord, RunLog, RunStatus};

use crate::data::SplitPanels;
use crate::dsl::{AlphaExpr, OperatorTable};
use crate::eval::FitnessReport;
use crate::llm::{Backend, LlmError, PromptKind, PromptTemplates, MAX_EXCHANGE_ATTEMPTS};
use crate::operators::{self, Attempted, OperatorContext, OperatorKind, OperatorOutcome};
use crate::thought_tree::ThoughtTree;
use runlog::{
    AnomalyRecord, BestRecord, EvaluationRecord, GenerationRecord, GroundingRecord, OutcomeRecord, OutcomeStatus,
    RankedEntry, RunEnd, RunStart, SelectionRecord,
};
use select::{select_indices, RankKey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorPreset {
    /// Crossover, mutation and pruning.
    Semantic,
    /// The single generic variation operator.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSet {
    Preset(OperatorPreset),
    Custom(Vec<OperatorKind>),
}

impl OperatorSet {
    pub fn kinds(&self) -> Vec<OperatorKind> {
        match self {
            OperatorSet::Preset(OperatorPreset::Semantic) => OperatorKind::SEMANTIC.to_vec(),
            OperatorSet::Preset(OperatorPreset::Flat) => vec![OperatorKind::Flat],
            OperatorSet::Custom(k) => {
                let mut out = Vec::new();
                for x in k {
                    if !out.contains(x) {
                        out.push(*x);
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolPolicy {
    /// Survivors come from parents and offspring together (elitist).
    ParentsAndOffspring,
    /// Survivors come from the offspring only; parents are kept if none were evaluated.
    Offspring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParentChoice {
    Uniform,
    /// Weights proportional to max(train IC, 0) plus a small floor.
    FitnessProportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub evaluation_budget: usize,
    pub operators: OperatorSet,
    pub selection_pool: PoolPolicy,
    pub crossover_parents: ParentChoice,
    pub seed: u64,
    pub horizon: usize,
    /// Calls per slot before it is skipped.
    pub max_attempts: u32,
    pub temperature: f64,
    pub grounding_temperature: f64,
    /// Stop after this many consecutive generations without a new evaluation.
    pub max_stalled_generations: u32,
    /// Name recorded in the run log and used as the chart series label.
    pub label: String,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            population_size: 10,
            evaluation_budget: 200,
            operators: OperatorSet::Preset(OperatorPreset::Semantic),
            selection_pool: PoolPolicy::ParentsAndOffspring,
            crossover_parents: ParentChoice::Uniform,
            seed: 0,
            horizon: crate::eval::DEFAULT_HORIZON,
            max_attempts: 3,
            temperature: 1.0,
            grounding_temperature: 0.2,
            max_stalled_generations: 5,
            label: "treevo".into(),
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError(m));
        if self.population_size < 2 {
            return bad("population_size must be at least 2".into());
        }
        if self.evaluation_budget < self.population_size {
            return bad(format!(
                "evaluation_budget {} is smaller than population_size {}",
                self.evaluation_budget, self.population_size
            ));
        }
        if self.operators.kinds().is_empty() {
            return bad("operator set is empty".into());
        }
        if self.max_attempts == 0 || self.max_attempts > MAX_EXCHANGE_ATTEMPTS {
            return bad(format!("max_attempts must be in 1..={MAX_EXCHANGE_ATTEMPTS}"));
        }
        if !(self.temperature >= 0.0) || !(self.grounding_temperature >= 0.0) {
            return bad("temperatures must be >= 0".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub thought: ThoughtTree,
    pub expression: Option<AlphaExpr>,
    /// Train split fitness, the search objective.
    pub fitness: Option<FitnessReport>,
    pub validation: Option<FitnessReport>,
    pub generation: u32,
}

impl Individual {
    fn expression_text(&self) -> String {
        self.expression.as_ref().map(|e| e.to_string()).unwrap_or_default()
    }

    fn rank_key<'a>(&self, text: &'a str, validation: bool) -> RankKey<'a> {
        let report = if validation { &self.validation } else { &self.fitness };
        RankKey {
            ic: report.as_ref().and_then(|r| r.ic),
            complexity: self.expression.as_ref().map_or(usize::MAX, AlphaExpr::complexity),
            generation: self.generation,
            expression: text,
        }
    }
}

/// The `n` best of `pool` by train IC with the documented tie-breaks.
/// Individuals without an IC are never selected.
pub fn select(pool: &[Individual], n: usize) -> Vec<Individual> {
    let texts: Vec<String> = pool.iter().map(Individual::expression_text).collect();
    let keys: Vec<RankKey<'_>> = pool.iter().zip(&texts).map(|(i, t)| i.rank_key(t, false)).collect();
    select_indices(&keys, n).into_iter().map(|k| pool[k].clone()).collect()
}

#[derive(Debug)]
pub struct RunResult {
    pub status: RunStatus,
    pub abort_reason: Option<String>,
    pub fatal_error: Option<LlmError>,
    pub best: Option<BestRecord>,
    pub best_individual: Option<Individual>,
    pub population: Vec<Individual>,
    pub convergence: Vec<ConvergencePoint>,
    pub evaluations_used: usize,
    pub generations: u32,
    pub llm_calls: usize,
    pub log: RunLog,
}

enum SlotJob {
    Init {
        index: u64,
        ground_index: u64,
    },
    Vary {
        kind: OperatorKind,
        parents: Vec<usize>,
        index: u64,
        ground_index: u64,
    },
}

enum TreeAttempt {
    Init(Attempted<ThoughtTree>),
    Vary(Attempted<OperatorOutcome>),
}

struct SlotOutput {
    tree: TreeAttempt,
    /// Set when the child was already seen before this generation started.
    known_duplicate: bool,
    grounding: Option<Attempted<(AlphaExpr, u32)>>,
}

struct Engine<'a> {
    config: &'a EvolutionConfig,
    backend: &'a dyn Backend,
    templates: &'a PromptTemplates,
    table: &'a OperatorTable,
    evaluator: Evaluator<'a>,
    log: RunLog,
    rng: ChaCha8Rng,
    counters: BTreeMap<PromptKind, u64>,
    seen: HashSet<String>,
    evaluated: Vec<Individual>,
    llm_calls: usize,
    fatal: Option<LlmError>,
    pool: rayon::ThreadPool,
}

impl<'a> Engine<'a> {
    fn next_index(&mut self, kind: PromptKind) -> u64 {
        let c = self.counters.entry(kind).or_insert(0);
        *c += 1;
        *c - 1
    }

    fn ctx(&self, generation: u32) -> OperatorContext<'a> {
        OperatorContext {
            backend: self.backend,
            templates: self.templates,
            table: self.table,
            max_attempts: self.config.max_attempts,
            temperature: self.config.temperature,
            grounding_temperature: self.config.grounding_temperature,
            generation,
        }
    }

    /// Runs the LLM-facing part of every slot with bounded concurrency; results are in slot order.
    fn run_slots(&self, jobs: &[SlotJob], parents: &[Individual], generation: u32) -> Vec<SlotOutput> {
        let ctx = self.ctx(generation);
        let seen = &self.seen;
        self.pool.install(|| {
            jobs.par_iter()
                .map(|job| {
                    let (tree, child) = match job {
                        SlotJob::Init { index, .. } => {
                            let a = operators::initialize(&ctx, *index);
                            let child = a.result.as_ref().ok().cloned();
                            (TreeAttempt::Init(a), child)
                        }
                        SlotJob::Vary { kind, parents: ps, index, .. } => {
                            let refs: Vec<&ThoughtTree> = ps.iter().map(|&p| &parents[p].thought).collect();
                            let a = operators::apply(&ctx, *kind, &refs, *index);
                            let child = a.result.as_ref().ok().map(|o| o.child.clone());
                            (TreeAttempt::Vary(a), child)
                        }
                    };
                    let known_duplicate =
                        matches!(job, SlotJob::Vary { .. }) && child.as_ref().is_some_and(|c| seen.contains(c.id()));
                    let ground_index = match job {
                        SlotJob::Init { ground_index, .. } | SlotJob::Vary { ground_index, .. } => *ground_index,
                    };
                    let grounding = match &child {
                        Some(c) if !known_duplicate => Some(operators::ground(&ctx, c, ground_index)),
                        _ => None,
                    };
                    SlotOutput {
                        tree,
                        known_duplicate,
                        grounding,
                    }
                })
                .collect()
        })
    }

    fn log_calls(&mut self, calls: Vec<runlog::LlmCallRecord>) {
        self.llm_calls += calls.len();
        for c in calls {
            self.log.push(LogRecord::LlmCall(c));
        }
    }

    fn note_backend_error(&mut self, e: &Option<LlmError>) {
        if let Some(e) = e {
            if e.is_fatal() && self.fatal.is_none() {
                self.fatal = Some(e.clone());
            }
        }
    }

    /// Logs slot outputs in order and returns the grounded candidates.
    fn absorb(&mut self, outputs: Vec<SlotOutput>, jobs: &[SlotJob], parents: &[Individual], generation: u32, accepted: &mut BTreeMap<String, usize>) -> Vec<Individual> {
        let mut candidates = Vec::new();
        for (slot, (out, job)) in outputs.into_iter().zip(jobs).enumerate() {
            let (child, operator) = match out.tree {
                TreeAttempt::Init(a) => {
                    let calls = a.calls.len() as u32;
                    self.log_calls(a.calls);
                    let (status, child, reason, attempts) = match a.result {
                        Ok(t) => (OutcomeStatus::Accepted, Some(t), None, 0),
                        Err(f) => {
                            self.note_backend_error(&f.backend_error);
                            (OutcomeStatus::Failed, None, Some(f.reason), f.attempts)
                        }
                    };
                    self.log.push(LogRecord::OperatorOutcome(OutcomeRecord {
                        generation,
                        operator: "init".into(),
                        slot,
                        parents: Vec::new(),
                        status,
                        child: child.as_ref().map(|t| t.id().to_string()),
                        tree: child.as_ref().map(ThoughtTree::to_canonical),
                        attempts: if status == OutcomeStatus::Accepted { calls } else { attempts },
                        size_delta: None,
                        reason,
                    }));
                    (child, "init")
                }
                TreeAttempt::Vary(a) => {
                    self.log_calls(a.calls);
                    let SlotJob::Vary { kind, parents: ps, .. } = job else {
                        unreachable!("slot kinds line up")
                    };
                    let parent_ids: Vec<String> = ps.iter().map(|&p| parents[p].thought.id().to_string()).collect();
                    match a.result {
                        Ok(o) => {
                            let duplicate = out.known_duplicate || self.seen.contains(o.child.id());
                            let status = if duplicate {
                                OutcomeStatus::Duplicate
                            } else {
                                OutcomeStatus::Accepted
                            };
                            self.log.push(LogRecord::OperatorOutcome(OutcomeRecord {
                                generation,
                                operator: kind.name().into(),
                                slot,
                                parents: parent_ids,
                                status,
                                child: Some(o.child.id().to_string()),
                                tree: Some(o.child.to_canonical()),
                                attempts: o.attempts,
                                size_delta: Some(o.child.root().size() as i64 - parents[ps[0]].thought.root().size() as i64),
                                reason: duplicate.then(|| "child already present in the run".to_string()),
                            }));
                            if let Some(message) = &o.anomaly {
                                self.log.push(LogRecord::Anomaly(AnomalyRecord {
                                    generation,
                                    thought: Some(o.child.id().to_string()),
                                    message: message.clone(),
                                }));
                            }
                            if duplicate {
                                (None, kind.name())
                            } else {
                                *accepted.entry(kind.name().into()).or_insert(0) += 1;
                                (Some(o.child), kind.name())
                            }
                        }
                        Err(f) => {
                            self.note_backend_error(&f.backend_error);
                            self.log.push(LogRecord::OperatorOutcome(OutcomeRecord {
                                generation,
                                operator: kind.name().into(),
                                slot,
                                parents: parent_ids,
                                status: OutcomeStatus::Failed,
                                child: None,
                                tree: None,
                                attempts: f.attempts,
                                size_delta: None,
                                reason: Some(f.reason),
                            }));
                            (None, kind.name())
                        }
                    }
                }
            };
            if operator == "init" && child.is_some() {
                *accepted.entry("init".into()).or_insert(0) += 1;
            }
            let Some(child) = child else {
                // a duplicate found only now may already have been grounded; keep the transcript complete
                if let Some(g) = out.grounding {
                    self.log_calls(g.calls);
                }
                continue;
            };
            self.seen.insert(child.id().to_string());
            let Some(g) = out.grounding else { continue };
            self.log_calls(g.calls);
            let expression = match g.result {
                Ok((e, attempts)) => {
                    self.log.push(LogRecord::Grounding(GroundingRecord {
                        generation,
                        thought: child.id().to_string(),
                        expression: Some(e.to_string()),
                        attempts,
                        reason: None,
                    }));
                    e
                }
                Err(f) => {
                    self.note_backend_error(&f.backend_error);
                    self.log.push(LogRecord::Grounding(GroundingRecord {
                        generation,
                        thought: child.id().to_string(),
                        expression: None,
                        attempts: f.attempts,
                        reason: Some(f.reason),
                    }));
                    continue;
                }
            };
            candidates.push(Individual {
                thought: child,
                expression: Some(expression),
                fitness: None,
                validation: None,
                generation,
            });
        }
        candidates
    }

    /// Evaluates candidates in order; returns those that received fitness and the fresh count.
    fn evaluate(&mut self, candidates: Vec<Individual>, generation: u32) -> (Vec<Individual>, usize) {
        let exprs: Vec<AlphaExpr> = candidates.iter().map(|c| c.expression.clone().expect("grounded")).collect();
        let results = self.evaluator.evaluate_batch(&exprs);
        let mut out = Vec::new();
        let mut fresh = 0;
        for (mut ind, r) in candidates.into_iter().zip(results) {
            let expr = ind.expression.as_ref().expect("grounded");
            self.log.push(LogRecord::Evaluation(EvaluationRecord {
                generation,
                thought: Some(ind.thought.id().to_string()),
                expression: expr.to_string(),
                complexity: expr.complexity(),
                status: r.status,
                evals_used: r.evals_used,
                train: r.evaluation.as_ref().map(|e| e.train.clone()),
                validation: r.evaluation.as_ref().map(|e| e.validation.clone()),
            }));
            if r.status == EvalStatus::Fresh {
                fresh += 1;
            }
            if let Some(ev) = r.evaluation {
                ind.fitness = Some(ev.train.clone());
                ind.validation = Some(ev.validation.clone());
                self.evaluated.push(ind.clone());
                out.push(ind);
            }
        }
        (out, fresh)
    }

    fn pick_pair(&mut self, population: &[Individual]) -> Vec<usize> {
        let n = population.len();
        if n == 1 {
            return vec![0, 0];
        }
        match self.config.crossover_parents {
            ParentChoice::Uniform => {
                let a = self.rng.random_range(0..n);
                let mut b = self.rng.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                vec![a, b]
            }
            ParentChoice::FitnessProportional => {
                let w: Vec<f64> = population
                    .iter()
                    .map(|p| p.fitness.as_ref().and_then(|f| f.ic).unwrap_or(0.0).max(0.0) + 1e-3)
                    .collect();
                let a = self.weighted(&w, None);
                let b = self.weighted(&w, Some(a));
                vec![a, b]
            }
        }
    }

    fn weighted(&mut self, w: &[f64], exclude: Option<usize>) -> usize {
        let total: f64 = w.iter().enumerate().filter(|(k, _)| Some(*k) != exclude).map(|(_, v)| v).sum();
        let mut x = self.rng.random::<f64>() * total;
        let mut last = 0;
        for (k, v) in w.iter().enumerate() {
            if Some(k) == exclude {
                continue;
            }
            last = k;
            if x < *v {
                return k;
            }
            x -= v;
        }
        last
    }

    fn log_selection(&mut self, generation: u32, pool: &[Individual], survivors: &[Individual]) {
        let texts: Vec<String> = pool.iter().map(Individual::expression_text).collect();
        let keys: Vec<RankKey<'_>> = pool.iter().zip(&texts).map(|(i, t)| i.rank_key(t, false)).collect();
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| keys[a].rank_cmp(&keys[b]));
        let entries = order
            .iter()
            .map(|&k| RankedEntry {
                id: pool[k].thought.id().to_string(),
                train_ic: keys[k].ic,
                complexity: pool[k].expression.as_ref().map_or(0, AlphaExpr::complexity),
                generation: pool[k].generation,
                expression: texts[k].clone(),
            })
            .collect();
        self.log.push(LogRecord::Selection(SelectionRecord {
            generation,
            target: self.config.population_size,
            pool: entries,
            survivors: survivors.iter().map(|s| s.thought.id().to_string()).collect(),
        }));
    }

    fn log_generation(
        &mut self,
        generation: u32,
        attempted: BTreeMap<String, usize>,
        accepted: BTreeMap<String, usize>,
        fresh: usize,
        population: &[Individual],
    ) {
        let ics: Vec<f64> = population.iter().filter_map(|p| p.fitness.as_ref().and_then(|f| f.ic)).collect();
        self.log.push(LogRecord::Generation(GenerationRecord {
            generation,
            attempted,
            accepted,
            evaluations_used: self.evaluator.used(),
            new_evaluations: fresh,
            best_train_ic: ics.iter().copied().reduce(f64::max),
            mean_train_ic: (!ics.is_empty()).then(|| ics.iter().sum::<f64>() / ics.len() as f64),
            best_validation_ic: self.evaluator.convergence().last().and_then(|p| p.best_validation_ic),
            survivors: population.iter().map(|p| p.thought.id().to_string()).collect(),
        }));
    }

    fn initialize(&mut self) -> Vec<Individual> {
        let n = self.config.population_size;
        let jobs: Vec<SlotJob> = (0..n)
            .map(|_| SlotJob::Init {
                index: self.next_index(PromptKind::Init),
                ground_index: self.next_index(PromptKind::Grounding),
            })
            .collect();
        let outputs = self.run_slots(&jobs, &[], 0);
        let mut accepted = BTreeMap::new();
        let candidates = self.absorb(outputs, &jobs, &[], 0, &mut accepted);
        let (population, fresh) = if self.fatal.is_some() {
            (Vec::new(), 0)
        } else {
            self.evaluate(candidates, 0)
        };
        if population.len() < n {
            self.log.push(LogRecord::Anomaly(AnomalyRecord {
                generation: 0,
                thought: None,
                message: format!("initial population has {} of {n} individuals", population.len()),
            }));
        }
        self.log_generation(0, BTreeMap::from([("init".to_string(), n)]), accepted, fresh, &population);
        population
    }

    /// One generation. Returns the next population and the number of fresh evaluations.
    fn step(&mut self, population: Vec<Individual>, generation: u32) -> (Vec<Individual>, usize) {
        let n = self.config.population_size;
        let mut jobs = Vec::new();
        let mut attempted = BTreeMap::new();
        for kind in self.config.operators.kinds() {
            attempted.insert(kind.name().to_string(), n);
            for i in 0..n {
                let parents = if kind == OperatorKind::Crossover {
                    self.pick_pair(&population)
                } else {
                    vec![i % population.len()]
                };
                jobs.push(SlotJob::Vary {
                    kind,
                    parents,
                    index: self.next_index(kind.prompt_kind()),
                    ground_index: self.next_index(PromptKind::Grounding),
                });
            }
        }
        let outputs = self.run_slots(&jobs, &population, generation);
        let mut accepted = BTreeMap::new();
        let candidates = self.absorb(outputs, &jobs, &population, generation, &mut accepted);
        if self.fatal.is_some() {
            return (population, 0);
        }
        let (offspring, fresh) = self.evaluate(candidates, generation);

        let mut pool: Vec<Individual> = match self.config.selection_pool {
            PoolPolicy::ParentsAndOffspring => population.iter().cloned().chain(offspring).collect(),
            PoolPolicy::Offspring if offspring.iter().any(|o| o.fitness.as_ref().is_some_and(|f| f.ic.is_some())) => offspring,
            PoolPolicy::Offspring => population.clone(),
        };
        let mut ids = HashSet::new();
        pool.retain(|p| ids.insert(p.thought.id().to_string()));
        let survivors = select(&pool, n);
        self.log_selection(generation, &pool, &survivors);
        self.log_generation(generation, attempted, accepted, fresh, &survivors);
        (survivors, fresh)
    }
}

/// Runs the search. Backend failures end the run with status `Aborted`; the
/// log up to that point is kept.
pub fn run(
    config: &EvolutionConfig,
    splits: &SplitPanels,
    backend: &dyn Backend,
    templates: &PromptTemplates,
    log: RunLog,
) -> Result<RunResult, ConfigError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(backend.max_in_flight().max(1))
        .build()
        .map_err(|e| ConfigError(format!("thread pool: {e}")))?;
    let mut engine = Engine {
        config,
        backend,
        templates,
        table: OperatorTable::standard(),
        evaluator: Evaluator::new(splits, config.horizon, config.evaluation_budget),
        log,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        counters: BTreeMap::new(),
        seen: HashSet::new(),
        evaluated: Vec::new(),
        llm_calls: 0,
        fatal: None,
        pool,
    };
    engine.log.push(LogRecord::RunStart(RunStart {
        engine: "treevo".into(),
        label: config.label.clone(),
        seed: config.seed,
        population_size: config.population_size,
        evaluation_budget: config.evaluation_budget,
        config: serde_json::to_value(config).expect("config serializes"),
    }));

    let mut population = engine.initialize();
    let mut generation = 0;
    let mut stalled = 0;
    let mut abort_reason = engine.fatal.as_ref().map(|e| e.to_string());
    if abort_reason.is_none() && population.is_empty() {
        abort_reason = Some("no individual survived initialization".into());
    }
    let stop = loop {
        if abort_reason.is_some() {
            break "aborted";
        }
        if engine.evaluator.remaining() == 0 {
            break "budget_exhausted";
        }
        if stalled >= config.max_stalled_generations {
            break "stalled";
        }
        generation += 1;
        let (next, fresh) = engine.step(population, generation);
        population = next;
        stalled = if fresh == 0 { stalled + 1 } else { 0 };
        if let Some(e) = &engine.fatal {
            abort_reason = Some(e.to_string());
        }
    };

    let best_individual = {
        let texts: Vec<String> = engine.evaluated.iter().map(Individual::expression_text).collect();
        let keys: Vec<RankKey<'_>> = engine.evaluated.iter().zip(&texts).map(|(i, t)| i.rank_key(t, true)).collect();
        select_indices(&keys, 1).first().map(|&k| engine.evaluated[k].clone())
    };
    let best = best_individual.as_ref().map(|b| {
        let expr = b.expression.as_ref().expect("evaluated individuals are grounded");
        BestRecord {
            id: Some(b.thought.id().to_string()),
            expression: expr.to_string(),
            generation: b.generation,
            train: b.fitness.clone().expect("evaluated"),
            validation: b.validation.clone().expect("evaluated"),
            test: engine.evaluator.test_report(expr),
        }
    });
    let status = if abort_reason.is_some() {
        RunStatus::Aborted
    } else {
        RunStatus::Completed
    };
    engine.log.push(LogRecord::RunEnd(RunEnd {
        status,
        reason: abort_reason.clone(),
        stop: stop.into(),
        evaluations_used: engine.evaluator.used(),
        generations: generation,
        llm_calls: engine.llm_calls,
        best: best.clone(),
    }));
    Ok(RunResult {
        status,
        abort_reason,
        fatal_error: engine.fatal.clone(),
        best,
        best_individual,
        population,
        convergence: engine.evaluator.convergence().to_vec(),
        evaluations_used: engine.evaluator.used(),
        generations: generation,
        llm_calls: engine.llm_calls,
        log: engine.log,
    })
}
