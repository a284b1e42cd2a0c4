//! Budgeted, cached expression evaluation shared by the LLM-driven search and GP.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SplitPanels;
use crate::dsl::AlphaExpr;
use crate::eval::{evaluate, forward_returns, report_from_scores, FitnessReport};
use crate::panel::{Panel, ReturnMatrix};

/// Fitness on the search (train) and model-selection (validation) splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub train: FitnessReport,
    pub validation: FitnessReport,
}

/// Canonical expression text to evaluation. Hits are returned as the same `Arc`.
#[derive(Debug, Default, Clone)]
pub struct EvalCache {
    map: HashMap<String, Arc<Evaluation>>,
}

impl EvalCache {
    pub fn get(&self, key: &str) -> Option<Arc<Evaluation>> {
        self.map.get(key).cloned()
    }

    pub fn insert(&mut self, key: String, value: Arc<Evaluation>) {
        self.map.insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Fresh,
    Cached,
    OverBudget,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub status: EvalStatus,
    pub evaluation: Option<Arc<Evaluation>>,
    /// Budget consumed after this slot.
    pub evals_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub evaluations: usize,
    pub best_validation_ic: Option<f64>,
}

struct Split<'a> {
    panel: &'a Panel,
    returns: ReturnMatrix,
}

impl<'a> Split<'a> {
    fn new(panel: &'a Panel, horizon: usize) -> Self {
        Split {
            panel,
            returns: forward_returns(panel, horizon),
        }
    }

    fn report(&self, expr: &AlphaExpr, text: &str) -> FitnessReport {
        let scores = evaluate(expr, self.panel);
        report_from_scores(&scores, &self.returns, self.panel.metric_range(), text.to_string())
    }
}

/// Counts one budget tick per cache miss and refuses misses once the budget is spent.
pub struct Evaluator<'a> {
    train: Split<'a>,
    validation: Split<'a>,
    test: Split<'a>,
    budget: usize,
    used: usize,
    cache: EvalCache,
    best_validation_ic: Option<f64>,
    convergence: Vec<ConvergencePoint>,
}

impl<'a> Evaluator<'a> {
    pub fn new(splits: &'a SplitPanels, horizon: usize, budget: usize) -> Self {
        Evaluator {
            train: Split::new(&splits.train, horizon),
            validation: Split::new(&splits.validation, horizon),
            test: Split::new(&splits.test, horizon),
            budget,
            used: 0,
            cache: EvalCache::default(),
            best_validation_ic: None,
            convergence: Vec::new(),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.used
    }

    pub fn cache(&self) -> &EvalCache {
        &self.cache
    }

    pub fn convergence(&self) -> &[ConvergencePoint] {
        &self.convergence
    }

    /// Evaluates in slot order semantics: a repeated expression later in the batch
    /// is a cache hit, and misses beyond the remaining budget are refused.
    /// Misses are computed in parallel.
    pub fn evaluate_batch(&mut self, exprs: &[AlphaExpr]) -> Vec<EvalResult> {
        let texts: Vec<String> = exprs.iter().map(|e| e.to_string()).collect();
        let mut plan: Vec<EvalStatus> = Vec::with_capacity(exprs.len());
        let mut scheduled: Vec<usize> = Vec::new();
        let mut pending: HashMap<&str, usize> = HashMap::new();
        for (k, text) in texts.iter().enumerate() {
            if self.cache.get(text).is_some() || pending.contains_key(text.as_str()) {
                plan.push(EvalStatus::Cached);
            } else if self.used + scheduled.len() < self.budget {
                pending.insert(text, k);
                scheduled.push(k);
                plan.push(EvalStatus::Fresh);
            } else {
                plan.push(EvalStatus::OverBudget);
            }
        }

        let computed: Vec<Evaluation> = {
            let this = &*self;
            scheduled
                .par_iter()
                .map(|&k| Evaluation {
                    train: this.train.report(&exprs[k], &texts[k]),
                    validation: this.validation.report(&exprs[k], &texts[k]),
                })
                .collect()
        };
        let mut computed = computed.into_iter();

        let mut out = Vec::with_capacity(exprs.len());
        for (k, status) in plan.into_iter().enumerate() {
            let evaluation = match status {
                EvalStatus::Fresh => {
                    let ev = Arc::new(computed.next().expect("one result per scheduled slot"));
                    self.used += 1;
                    if let Some(v) = ev.validation.ic {
                        if self.best_validation_ic.is_none_or(|b| v > b) {
                            self.best_validation_ic = Some(v);
                        }
                    }
                    self.convergence.push(ConvergencePoint {
                        evaluations: self.used,
                        best_validation_ic: self.best_validation_ic,
                    });
                    self.cache.insert(texts[k].clone(), Arc::clone(&ev));
                    Some(ev)
                }
                EvalStatus::Cached => self.cache.get(&texts[k]),
                EvalStatus::OverBudget => None,
            };
            out.push(EvalResult {
                status,
                evaluation,
                evals_used: self.used,
            });
        }
        out
    }

    /// Held-out report; not budgeted.
    pub fn test_report(&self, expr: &AlphaExpr) -> FitnessReport {
        self.test.report(expr, &expr.to_string())
    }
}
