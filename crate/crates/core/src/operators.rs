//! LLM-backed variation of thought trees and grounding of thoughts into expressions.
//!
//! The model chooses which subtrees to combine, replace or drop; this module
//! only renders prompts, extracts results, enforces validity and distinctness,
//! and records lineage.

use serde::{Deserialize, Serialize};

use crate::dsl::{AlphaExpr, OperatorTable};
use crate::evolution::runlog::LlmCallRecord;
use crate::llm::extract::{extract_expression_with, extract_tree};
use crate::llm::prompts::corrective_suffix;
use crate::llm::{Backend, CallTag, ChatExchange, LlmError, PromptKind, PromptTemplates};
use crate::thought_tree::{Lineage, ThoughtTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Crossover,
    Mutation,
    Pruning,
    Flat,
}

impl OperatorKind {
    pub const SEMANTIC: [OperatorKind; 3] = [OperatorKind::Crossover, OperatorKind::Mutation, OperatorKind::Pruning];

    pub fn name(self) -> &'static str {
        self.prompt_kind().name()
    }

    pub fn prompt_kind(self) -> PromptKind {
        match self {
            OperatorKind::Crossover => PromptKind::Crossover,
            OperatorKind::Mutation => PromptKind::Mutation,
            OperatorKind::Pruning => PromptKind::Pruning,
            OperatorKind::Flat => PromptKind::Flat,
        }
    }

    pub fn parent_count(self) -> usize {
        match self {
            OperatorKind::Crossover => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OperatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "crossover" => Ok(OperatorKind::Crossover),
            "mutation" => Ok(OperatorKind::Mutation),
            "pruning" => Ok(OperatorKind::Pruning),
            "flat" | "flat_variation" => Ok(OperatorKind::Flat),
            other => Err(format!("unknown operator `{other}`")),
        }
    }
}

/// Shared inputs for one call site.
pub struct OperatorContext<'a> {
    pub backend: &'a dyn Backend,
    pub templates: &'a PromptTemplates,
    pub table: &'a OperatorTable,
    pub max_attempts: u32,
    pub temperature: f64,
    pub grounding_temperature: f64,
    pub generation: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorOutcome {
    pub child: ThoughtTree,
    pub operator: OperatorKind,
    pub parent_ids: Vec<String>,
    pub attempts: u32,
    /// Set when pruning produced a larger tree.
    pub anomaly: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorFailure {
    pub reason: String,
    pub attempts: u32,
    /// Backend error that ended the slot, if any.
    pub backend_error: Option<LlmError>,
}

/// Result of one operator or grounding slot together with its call transcript.
#[derive(Debug, Clone)]
pub struct Attempted<T> {
    pub result: Result<T, OperatorFailure>,
    pub calls: Vec<LlmCallRecord>,
}

fn call(
    ctx: &OperatorContext<'_>,
    tag: CallTag,
    exchange: &ChatExchange,
    calls: &mut Vec<LlmCallRecord>,
) -> Result<String, LlmError> {
    let out = ctx.backend.complete(tag, exchange);
    let (response, error, latency_ms, http_attempts) = match &out {
        Ok(c) => (Some(ctx.backend.scrub(&c.text)), None, c.latency_ms, c.http_attempts),
        Err(e) => (None, Some(ctx.backend.scrub(&e.to_string())), 0, e.http_attempts()),
    };
    calls.push(LlmCallRecord {
        generation: ctx.generation,
        kind: tag.kind.name().into(),
        index: tag.index,
        attempt: tag.attempt,
        temperature: exchange.temperature,
        system: ctx.backend.scrub(&exchange.system_text),
        user: ctx.backend.scrub(&exchange.user_text),
        response,
        error,
        latency_ms,
        http_attempts,
    });
    out.map(|c| c.text)
}

/// Runs up to `max_attempts` calls, feeding the previous rejection reason back.
fn with_attempts<T>(
    ctx: &OperatorContext<'_>,
    kind: PromptKind,
    index: u64,
    temperature: f64,
    prompt: &str,
    mut accept: impl FnMut(&str) -> Result<T, String>,
) -> Attempted<(T, u32)> {
    let mut calls = Vec::new();
    let mut reason = String::new();
    for attempt in 0..ctx.max_attempts {
        let user = if attempt == 0 {
            prompt.to_string()
        } else {
            format!("{prompt}{}", corrective_suffix(&reason))
        };
        let exchange = ChatExchange::new(&ctx.templates.system, user, temperature, ctx.max_attempts);
        let tag = CallTag { kind, index, attempt };
        match call(ctx, tag, &exchange, &mut calls) {
            Ok(text) => match accept(&text) {
                Ok(v) => {
                    return Attempted {
                        result: Ok((v, attempt + 1)),
                        calls,
                    }
                }
                Err(r) => reason = r,
            },
            Err(e) => {
                return Attempted {
                    result: Err(OperatorFailure {
                        reason: e.to_string(),
                        attempts: attempt + 1,
                        backend_error: Some(e),
                    }),
                    calls,
                }
            }
        }
    }
    Attempted {
        result: Err(OperatorFailure {
            reason,
            attempts: ctx.max_attempts,
            backend_error: None,
        }),
        calls,
    }
}

/// Applies `kind` to `parents` (two for crossover, one otherwise). `index` is the
/// per-kind call slot.
pub fn apply(ctx: &OperatorContext<'_>, kind: OperatorKind, parents: &[&ThoughtTree], index: u64) -> Attempted<OperatorOutcome> {
    assert_eq!(parents.len(), kind.parent_count(), "{kind} takes {} parents", kind.parent_count());
    let prompt = ctx.templates.render(kind.prompt_kind(), parents, ctx.table);
    let parent_ids: Vec<String> = parents.iter().map(|p| p.id().to_string()).collect();
    let attempted = with_attempts(ctx, kind.prompt_kind(), index, ctx.temperature, &prompt, |text| {
        let tree = extract_tree(text).map_err(|e| e.to_string())?;
        if parent_ids.iter().any(|p| p == tree.id()) {
            return Err("the new tree is identical to a parent tree".into());
        }
        Ok(tree)
    });
    Attempted {
        result: attempted.result.map(|(tree, attempts)| {
            let anomaly = (kind == OperatorKind::Pruning && tree.root().size() > parents[0].root().size()).then(|| {
                format!(
                    "pruning grew the tree from {} to {} nodes",
                    parents[0].root().size(),
                    tree.root().size()
                )
            });
            let child = tree.set_lineage(Lineage {
                generation: ctx.generation,
                operator: kind.name().into(),
                parents: parent_ids.clone(),
            });
            OperatorOutcome {
                child,
                operator: kind,
                parent_ids,
                attempts,
                anomaly,
            }
        }),
        calls: attempted.calls,
    }
}

pub fn crossover(ctx: &OperatorContext<'_>, t1: &ThoughtTree, t2: &ThoughtTree, index: u64) -> Attempted<OperatorOutcome> {
    apply(ctx, OperatorKind::Crossover, &[t1, t2], index)
}

pub fn mutation(ctx: &OperatorContext<'_>, t: &ThoughtTree, index: u64) -> Attempted<OperatorOutcome> {
    apply(ctx, OperatorKind::Mutation, &[t], index)
}

pub fn pruning(ctx: &OperatorContext<'_>, t: &ThoughtTree, index: u64) -> Attempted<OperatorOutcome> {
    apply(ctx, OperatorKind::Pruning, &[t], index)
}

pub fn flat_variation(ctx: &OperatorContext<'_>, t: &ThoughtTree, index: u64) -> Attempted<OperatorOutcome> {
    apply(ctx, OperatorKind::Flat, &[t], index)
}

/// A fresh thought from the initialization prompt.
pub fn initialize(ctx: &OperatorContext<'_>, index: u64) -> Attempted<ThoughtTree> {
    let prompt = ctx.templates.render(PromptKind::Init, &[], ctx.table);
    let a = with_attempts(ctx, PromptKind::Init, index, ctx.temperature, &prompt, |text| {
        extract_tree(text).map_err(|e| e.to_string())
    });
    Attempted {
        result: a.result.map(|(t, _)| {
            t.set_lineage(Lineage {
                generation: ctx.generation,
                operator: "init".into(),
                parents: Vec::new(),
            })
        }),
        calls: a.calls,
    }
}

/// Translates a thought into an expression.
pub fn ground(ctx: &OperatorContext<'_>, thought: &ThoughtTree, index: u64) -> Attempted<(AlphaExpr, u32)> {
    let prompt = ctx.templates.render(PromptKind::Grounding, &[thought], ctx.table);
    with_attempts(ctx, PromptKind::Grounding, index, ctx.grounding_temperature, &prompt, |text| {
        extract_expression_with(text, ctx.table).map_err(|e| e.to_string())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::synthetic::expr_thought;
    use crate::llm::{MockBackend, MockScript};
    use crate::thought_tree::{example_tree, ThoughtNode};

    fn fenced(t: &ThoughtTree) -> String {
        format!("Sure.\n```json\n{}\n```\n", t.to_canonical())
    }

    fn ctx<'a>(b: &'a MockBackend, templates: &'a PromptTemplates) -> OperatorContext<'a> {
        OperatorContext {
            backend: b,
            templates,
            table: OperatorTable::standard(),
            max_attempts: 3,
            temperature: 1.0,
            grounding_temperature: 0.2,
            generation: 1,
        }
    }

    fn parent() -> ThoughtTree {
        example_tree()
    }

    #[test]
    fn verbatim_parent_is_retried() {
        let p = parent();
        let changed = p
            .replace_subtree(&crate::NodePath(vec![0, 0]), ThoughtNode::leaf("use the high price instead"))
            .unwrap();
        let mut s = MockScript::default();
        s.push(PromptKind::Mutation, 0, 0, fenced(&p));
        s.push(PromptKind::Mutation, 0, 1, fenced(&changed));
        let b = MockBackend::new(s, 0);
        let t = PromptTemplates::default();
        let out = mutation(&ctx(&b, &t), &p, 0);
        let o = out.result.unwrap();
        assert_eq!(o.attempts, 2);
        assert_eq!(o.child.root().size(), p.root().size());
        assert_eq!(o.child.lineage().parents, vec![p.id().to_string()]);
        assert_eq!(out.calls.len(), 2);
        assert!(out.calls[1].user.contains("identical to a parent"));
    }

    #[test]
    fn crossover_containing_both_parents_subtrees() {
        let a = expr_thought(&crate::parse("ts_mean(close, 5) - open").unwrap()).unwrap();
        let b = expr_thought(&crate::parse("cs_rank(volume) * vwap").unwrap()).unwrap();
        let child = ThoughtTree::new(ThoughtNode::new(
            "Apply mul",
            vec![a.root().children()[0].clone(), b.root().children()[1].clone()],
        ));
        let mut s = MockScript::default();
        s.push(PromptKind::Crossover, 4, 0, fenced(&child));
        let bk = MockBackend::new(s, 0);
        let t = PromptTemplates::default();
        let o = crossover(&ctx(&bk, &t), &a, &b, 4).result.unwrap();
        let hashes = |t: &ThoughtTree| t.root().walk().into_iter().map(|(_, n)| n.content_hash()).collect::<Vec<_>>();
        let ch = hashes(&o.child);
        assert!(ch.contains(&a.root().children()[0].content_hash()));
        assert!(ch.contains(&b.root().children()[1].content_hash()));
        assert_eq!(o.parent_ids.len(), 2);
    }

    #[test]
    fn crossover_of_identical_parents_must_differ() {
        let p = parent();
        let mut s = MockScript::default();
        for attempt in 0..3 {
            s.push(PromptKind::Crossover, 0, attempt, fenced(&p));
        }
        let b = MockBackend::new(s, 0);
        let t = PromptTemplates::default();
        let out = crossover(&ctx(&b, &t), &p, &p, 0);
        let f = out.result.unwrap_err();
        assert_eq!(f.attempts, 3);
        assert!(f.backend_error.is_none());
    }

    #[test]
    fn pruning_outcomes() {
        let p = parent();
        let dropped = ThoughtTree::new(ThoughtNode::new(p.root().label(), vec![p.root().children()[0].clone()]));
        let bigger = p
            .replace_subtree(
                &crate::NodePath(vec![1]),
                ThoughtNode::new("x", vec![ThoughtNode::leaf("y"), ThoughtNode::leaf("z"), ThoughtNode::leaf("w")]),
            )
            .unwrap();
        let mut s = MockScript::default();
        s.push(PromptKind::Pruning, 0, 0, fenced(&dropped));
        s.push(PromptKind::Pruning, 1, 0, fenced(&bigger));
        let b = MockBackend::new(s, 0);
        let t = PromptTemplates::default();
        let c = ctx(&b, &t);
        let small = pruning(&c, &p, 0).result.unwrap();
        assert!(small.child.root().size() < p.root().size());
        assert!(small.anomaly.is_none());
        let big = pruning(&c, &p, 1).result.unwrap();
        assert!(big.anomaly.is_some());
        let leaf = ThoughtTree::new(ThoughtNode::leaf("momentum"));
        let o = pruning(&c, &leaf, 2).result.unwrap();
        assert!(o.child.root().size() >= 1);
    }

    #[test]
    fn deeper_mutation_within_caps_is_accepted() {
        let p = parent();
        let deeper = p
            .replace_subtree(
                &crate::NodePath(vec![0, 0]),
                ThoughtNode::new("compare against a slower average", vec![ThoughtNode::new("use 20 days", vec![ThoughtNode::leaf("of vwap")])]),
            )
            .unwrap();
        assert!(deeper.root().depth() > p.root().depth());
        let mut s = MockScript::default();
        s.push(PromptKind::Mutation, 0, 0, fenced(&deeper));
        let b = MockBackend::new(s, 0);
        let t = PromptTemplates::default();
        let o = mutation(&ctx(&b, &t), &p, 0).result.unwrap();
        assert_eq!(o.child.root(), deeper.root());
        assert_eq!(o.attempts, 1);
    }

    #[test]
    fn flat_prompt_has_no_subtree_instructions() {
        let b = MockBackend::new(MockScript::default(), 0);
        let t = PromptTemplates::default();
        let out = flat_variation(&ctx(&b, &t), &parent(), 0);
        assert!(out.result.is_ok());
        let prompt = &out.calls[0].user;
        assert!(prompt.starts_with("task: flat"));
        assert!(!prompt.to_lowercase().contains("subtree"));
    }

    #[test]
    fn backend_failure_skips_slot() {
        let mut s = MockScript::default();
        s.responses.push(crate::llm::mock::ScriptEntry {
            kind: PromptKind::Flat,
            index: 0,
            attempt: 0,
            text: String::new(),
            fail: Some("HTTP 503".into()),
        });
        let b = MockBackend::new(s, 0);
        let t = PromptTemplates::default();
        let f = flat_variation(&ctx(&b, &t), &parent(), 0).result.unwrap_err();
        assert!(matches!(f.backend_error, Some(LlmError::ExhaustedRetries { .. })));
    }

    #[test]
    fn grounding_retries_on_parse_error() {
        let mut s = MockScript::default();
        s.push(PromptKind::Grounding, 0, 0, "The alpha is ts_mean(close) obviously");
        s.push(PromptKind::Grounding, 0, 1, "```\nts_mean(close, 10)\n```");
        let b = MockBackend::new(s, 0);
        let t = PromptTemplates::default();
        let out = ground(&ctx(&b, &t), &parent(), 0);
        let (e, attempts) = out.result.unwrap();
        assert_eq!(e, crate::parse("ts_mean(close, 10)").unwrap());
        assert_eq!(attempts, 2);
        assert_eq!(out.calls[0].temperature, 0.2);
    }
}
