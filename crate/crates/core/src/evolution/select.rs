//! Survivor ranking shared by the LLM-driven search and GP.

use std::cmp::Ordering;

/// Fields that order candidates: IC descending, then complexity ascending,
/// earlier generation, and expression text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankKey<'a> {
    pub ic: Option<f64>,
    pub complexity: usize,
    pub generation: u32,
    pub expression: &'a str,
}

impl RankKey<'_> {
    /// `Less` means `self` ranks ahead of `other`. Missing IC ranks last.
    pub fn rank_cmp(&self, other: &RankKey<'_>) -> Ordering {
        let ic = match (self.ic, other.ic) {
            (Some(a), Some(b)) => b.total_cmp(&a),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        ic.then(self.complexity.cmp(&other.complexity))
            .then(self.generation.cmp(&other.generation))
            .then_with(|| self.expression.cmp(other.expression))
    }
}

/// Indices of the `n` best-ranked items among those with an IC. Stable for full ties.
pub fn select_indices<'a>(keys: &[RankKey<'a>], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).filter(|&k| keys[k].ic.is_some()).collect();
    order.sort_by(|&a, &b| keys[a].rank_cmp(&keys[b]));
    order.truncate(n);
    order
}

/// Recomputes a logged selection from its pool and checks the recorded survivors.
pub fn verify_selection(record: &super::runlog::SelectionRecord) -> Result<(), String> {
    let keys: Vec<RankKey<'_>> = record
        .pool
        .iter()
        .map(|e| RankKey {
            ic: e.train_ic,
            complexity: e.complexity,
            generation: e.generation,
            expression: &e.expression,
        })
        .collect();
    let with_ic = keys.iter().filter(|k| k.ic.is_some()).count();
    let expected: Vec<&str> = select_indices(&keys, record.target).into_iter().map(|k| record.pool[k].id.as_str()).collect();
    if record.survivors.len() != record.target.min(with_ic) {
        return Err(format!(
            "generation {}: {} survivors, expected min({}, {with_ic})",
            record.generation,
            record.survivors.len(),
            record.target
        ));
    }
    if record.survivors.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(format!("generation {}: survivors differ from the recomputed ranking", record.generation));
    }
    Ok(())
}
