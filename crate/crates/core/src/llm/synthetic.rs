//! A deterministic stand-in for a language model.
//!
//! Thoughts it writes spell out an expression node by node ("Apply ts_mean over
//! 20 days" with the operand as its child), so grounding can read the expression
//! back. Variation reuses the symbol-level operators on the decoded expressions.
//! Trees it cannot decode are grounded to a random expression seeded by the tree id.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::dsl::{random_expr_with, AlphaExpr, Feature, OperatorTable};
use crate::gp::{gp_crossover, gp_mutation_with};
use crate::thought_tree::{ThoughtNode, ThoughtTree};

use super::extract::find_trees;
use super::{CallTag, ChatExchange, PromptKind};

const TRIES: usize = 20;

/// Thought node spelling out `e`.
pub fn encode_expr(e: &AlphaExpr) -> ThoughtNode {
    match e {
        AlphaExpr::Feature(f) => ThoughtNode::leaf(format!("Use the {f} series")),
        AlphaExpr::Const(c) => ThoughtNode::leaf(format!("Use the constant {c}")),
        AlphaExpr::Call { op, args, window } => {
            let label = match window {
                Some(w) => format!("Apply {} over {w} days", op.name()),
                None => format!("Apply {}", op.name()),
            };
            ThoughtNode::new(label, args.iter().map(encode_expr).collect())
        }
    }
}

/// Inverse of [`encode_expr`]; `None` for trees that do not follow the scheme.
pub fn decode_thought(n: &ThoughtNode, table: &OperatorTable) -> Option<AlphaExpr> {
    let label = n.label();
    if let Some(rest) = label.strip_prefix("Use the constant ") {
        return n.is_leaf().then(|| rest.parse::<f64>().ok().map(AlphaExpr::Const)).flatten();
    }
    if let Some(rest) = label.strip_prefix("Use the ").and_then(|r| r.strip_suffix(" series")) {
        return n.is_leaf().then(|| rest.parse::<Feature>().ok().map(AlphaExpr::Feature)).flatten();
    }
    let rest = label.strip_prefix("Apply ")?;
    let (name, window) = match rest.split_once(" over ") {
        Some((name, w)) => (name, Some(w.strip_suffix(" days")?.parse::<u16>().ok()?)),
        None => (rest, None),
    };
    let spec = table.lookup(name)?;
    let args = n
        .children()
        .iter()
        .map(|c| decode_thought(c, table))
        .collect::<Option<Vec<_>>>()?;
    if args.len() != spec.kind.arity() || window.is_some() != spec.kind.is_rolling() {
        return None;
    }
    let e = AlphaExpr::Call {
        op: spec.op,
        args,
        window,
    };
    e.validate_with(table).ok().map(|_| e)
}

/// The thought for `e`, if it fits the tree caps.
pub fn expr_thought(e: &AlphaExpr) -> Option<ThoughtTree> {
    let t = ThoughtTree::new(encode_expr(e));
    t.is_valid().then_some(t)
}

fn seed_of(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone)]
pub struct SyntheticResponder {
    seed: u64,
    table: OperatorTable,
}

impl SyntheticResponder {
    pub fn new(seed: u64) -> Self {
        SyntheticResponder {
            seed,
            table: OperatorTable::standard().clone(),
        }
    }

    pub fn with_table(mut self, table: OperatorTable) -> Self {
        self.table = table;
        self
    }

    /// Grounding of a thought: decoded when possible, otherwise seeded by its id.
    pub fn ground(&self, t: &ThoughtTree) -> AlphaExpr {
        decode_thought(t.root(), &self.table).unwrap_or_else(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&[b"ground", t.id().as_bytes()]));
            let depth = rng.random_range(2..=4);
            random_expr_with(&mut rng, depth, &self.table)
        })
    }

    /// Reply text; a pure function of the seed, the tag and the prompt.
    pub fn respond(&self, tag: CallTag, exchange: &ChatExchange) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&[
            &self.seed.to_le_bytes(),
            tag.kind.name().as_bytes(),
            &tag.index.to_le_bytes(),
            &tag.attempt.to_le_bytes(),
            exchange.user_text.as_bytes(),
        ]));
        let trees: Vec<ThoughtTree> = find_trees(&exchange.user_text).into_iter().filter_map(Result::ok).collect();
        let last = |k: usize| -> Vec<&ThoughtTree> { trees.iter().rev().take(k).rev().collect() };

        if tag.kind == PromptKind::Grounding {
            let e = match last(1).first() {
                Some(t) => self.ground(t),
                None => random_expr_with(&mut rng, 3, &self.table),
            };
            return format!("This thought translates to the following expression.\n\n```\n{e}\n```\n");
        }

        let parents: Vec<AlphaExpr> = match tag.kind {
            PromptKind::Crossover => last(2),
            PromptKind::Init => Vec::new(),
            _ => last(1),
        }
        .into_iter()
        .map(|t| self.ground(t))
        .collect();

        let child = self.vary(tag.kind, &parents, &mut rng);
        let tree = expr_thought(&child).expect("vary returns encodable expressions");
        format!(
            "Here is the {} thought.\n\n```json\n{}\n```\n\nEach child node is an input to its parent step.\n",
            match tag.kind {
                PromptKind::Init => "initial",
                _ => "revised",
            },
            tree.to_canonical()
        )
    }

    fn vary(&self, kind: PromptKind, parents: &[AlphaExpr], rng: &mut ChaCha8Rng) -> AlphaExpr {
        for _ in 0..TRIES {
            let candidate = match (kind, parents) {
                (PromptKind::Crossover, [a, b]) => gp_crossover(a, b, rng),
                (PromptKind::Crossover, [a]) => gp_mutation_with(a, rng, 2, &self.table),
                (PromptKind::Mutation, [a, ..]) => gp_mutation_with(a, rng, 3, &self.table),
                (PromptKind::Pruning, [a, ..]) => shrink(a, rng),
                (PromptKind::Flat, [a, ..]) => gp_mutation_with(a, rng, 2, &self.table),
                _ => {
                    let depth = rng.random_range(2..=4);
                    random_expr_with(rng, depth, &self.table)
                }
            };
            if parents.contains(&candidate) || candidate.validate_with(&self.table).is_err() {
                continue;
            }
            if expr_thought(&candidate).is_some() {
                return candidate;
            }
        }
        loop {
            let depth = rng.random_range(2..=3);
            let e = random_expr_with(rng, depth, &self.table);
            if !parents.contains(&e) && expr_thought(&e).is_some() {
                return e;
            }
        }
    }
}

/// Replaces a random internal node by one of its operands; a leaf becomes another leaf.
fn shrink(e: &AlphaExpr, rng: &mut ChaCha8Rng) -> AlphaExpr {
    let internal: Vec<Vec<usize>> = e.paths().into_iter().filter(|p| !e.get(p).expect("own path").is_leaf()).collect();
    if internal.is_empty() {
        return crate::dsl::random::random_leaf(rng);
    }
    let at = &internal[rng.random_range(0..internal.len())];
    let node = e.get(at).expect("own path");
    let keep = node.args()[rng.random_range(0..node.args().len())].clone();
    e.replaced(at, keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse, random_expr};
    use crate::llm::extract::{extract_expression, extract_tree};
    use crate::llm::PromptTemplates;

    #[test]
    fn encode_decode_round_trip() {
        let table = OperatorTable::standard();
        for s in 0..300 {
            let e = random_expr(s, 5);
            assert_eq!(decode_thought(&encode_expr(&e), table), Some(e));
        }
        let e = parse("ts_corr(close, (-1.5), 20) / open").unwrap();
        assert_eq!(decode_thought(&encode_expr(&e), table), Some(e));
    }

    #[test]
    fn foreign_trees_ground_deterministically() {
        let r = SyntheticResponder::new(0);
        let t = crate::thought_tree::example_tree();
        assert_eq!(r.ground(&t), r.ground(&t));
        assert!(r.ground(&t).validate().is_ok());
    }

    fn tag(kind: PromptKind, index: u64) -> CallTag {
        CallTag { kind, index, attempt: 0 }
    }

    #[test]
    fn responses_are_usable_and_distinct_from_parents() {
        let r = SyntheticResponder::new(3);
        let templates = PromptTemplates::default();
        let table = OperatorTable::standard();
        let a = expr_thought(&parse("ts_mean(close, 5) - open").unwrap()).unwrap();
        let b = expr_thought(&parse("cs_rank(volume)").unwrap()).unwrap();
        for (k, kind) in [PromptKind::Init, PromptKind::Crossover, PromptKind::Mutation, PromptKind::Pruning, PromptKind::Flat]
            .into_iter()
            .enumerate()
        {
            let user = templates.render(kind, &[&a, &b], table);
            let ex = ChatExchange::new(&templates.system, user, 1.0, 3);
            let text = r.respond(tag(kind, k as u64), &ex);
            assert_eq!(text, r.respond(tag(kind, k as u64), &ex));
            let child = extract_tree(&text).unwrap();
            assert_ne!(child.id(), a.id(), "{kind}");
            if kind == PromptKind::Crossover {
                assert_ne!(child.id(), b.id());
            }
            if kind == PromptKind::Pruning {
                assert!(child.root().size() < a.root().size());
            }
        }
        let user = templates.render(PromptKind::Grounding, &[&a], table);
        let text = r.respond(tag(PromptKind::Grounding, 0), &ChatExchange::new("s", user, 0.2, 3));
        assert_eq!(extract_expression(&text).unwrap(), parse("ts_mean(close, 5) - open").unwrap());
    }
}
