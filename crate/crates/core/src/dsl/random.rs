use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AlphaExpr, Feature, OperatorTable, MAX_EXPR_DEPTH, MAX_EXPR_NODES};

/// Windows sampled by the generator and variation operators.
pub const WINDOW_CHOICES: [u16; 8] = [1, 2, 3, 5, 10, 20, 40, 60];

const LEAF_PROB: f64 = 0.3;
const CONST_PROB: f64 = 0.15;

/// Random valid expression of depth at most `max_depth`, deterministic in `seed`.
pub fn random_expr(seed: u64, max_depth: usize) -> AlphaExpr {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_expr_with(&mut rng, max_depth, OperatorTable::standard())
}

pub fn random_expr_with<R: Rng + ?Sized>(rng: &mut R, max_depth: usize, table: &OperatorTable) -> AlphaExpr {
    let max_depth = max_depth.clamp(1, MAX_EXPR_DEPTH);
    loop {
        let e = grow(rng, max_depth, table);
        if e.complexity() <= MAX_EXPR_NODES {
            return e;
        }
    }
}

fn grow<R: Rng + ?Sized>(rng: &mut R, depth_left: usize, table: &OperatorTable) -> AlphaExpr {
    if depth_left <= 1 || table.is_empty() || rng.random_bool(LEAF_PROB) {
        return random_leaf(rng);
    }
    let spec = table.specs()[rng.random_range(0..table.len())];
    let args = (0..spec.kind.arity())
        .map(|_| grow(rng, depth_left - 1, table))
        .collect();
    let window = spec
        .kind
        .is_rolling()
        .then(|| WINDOW_CHOICES[rng.random_range(0..WINDOW_CHOICES.len())]);
    AlphaExpr::Call {
        op: spec.op,
        args,
        window,
    }
}

pub(crate) fn random_leaf<R: Rng + ?Sized>(rng: &mut R) -> AlphaExpr {
    if rng.random_bool(CONST_PROB) {
        // two-decimal constants in [-5, 5]
        AlphaExpr::Const(rng.random_range(-500i32..=500) as f64 / 100.0)
    } else {
        AlphaExpr::Feature(Feature::ALL[rng.random_range(0..Feature::ALL.len())])
    }
}
