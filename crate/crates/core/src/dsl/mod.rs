//! Typed expression language for formulaic alphas.
//!
//! Expressions combine the six raw market features with the operators in
//! [`OperatorTable`]. The textual form is infix arithmetic (`+ - * /`, unary
//! `-`) plus function-call syntax for named operators; rolling operators take
//! an integer-literal window as their last argument:
//!
//! ```text
//! ts_mean((close - open) / open, 5) * cs_rank(volume)
//! ```

mod ops;
mod parser;
pub(crate) mod random;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ops::{Op, OpKind, OperatorSpec, OperatorTable};
pub use parser::{parse, parse_with};
pub use random::{random_expr, random_expr_with, WINDOW_CHOICES};

pub const MAX_WINDOW: u16 = 250;
pub const MAX_EXPR_DEPTH: usize = 12;
pub const MAX_EXPR_NODES: usize = 128;
pub const CONST_LIMIT: f64 = 100.0;

/// Raw market data feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Open,
    High,
    Low,
    Close,
    Volume,
    Vwap,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Open,
        Feature::High,
        Feature::Low,
        Feature::Close,
        Feature::Volume,
        Feature::Vwap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Open => "open",
            Feature::High => "high",
            Feature::Low => "low",
            Feature::Close => "close",
            Feature::Volume => "volume",
            Feature::Vwap => "vwap",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Feature::ALL.into_iter().find(|f| f.name() == s).ok_or(())
    }
}

/// Expression AST.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaExpr {
    Feature(Feature),
    Const(f64),
    /// Operator application. `window` is present exactly for rolling operators.
    Call {
        op: Op,
        args: Vec<AlphaExpr>,
        window: Option<u16>,
    },
}

impl AlphaExpr {
    pub fn feature(f: Feature) -> Self {
        AlphaExpr::Feature(f)
    }

    pub fn call(op: Op, args: Vec<AlphaExpr>) -> Self {
        AlphaExpr::Call { op, args, window: None }
    }

    pub fn rolling(op: Op, args: Vec<AlphaExpr>, window: u16) -> Self {
        AlphaExpr::Call {
            op,
            args,
            window: Some(window),
        }
    }

    pub fn binary(op: Op, left: AlphaExpr, right: AlphaExpr) -> Self {
        Self::call(op, vec![left, right])
    }

    pub fn args(&self) -> &[AlphaExpr] {
        match self {
            AlphaExpr::Call { args, .. } => args,
            _ => &[],
        }
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self, AlphaExpr::Call { .. })
    }

    /// AST node count; window literals are not nodes.
    pub fn complexity(&self) -> usize {
        1 + self.args().iter().map(AlphaExpr::complexity).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.args().iter().map(AlphaExpr::depth).max().unwrap_or(0)
    }

    /// Longest chain of rolling windows along any path, i.e. how many leading
    /// days an evaluation needs before the first non-missing value.
    pub fn lookback(&self) -> usize {
        match self {
            AlphaExpr::Call { op, args, window } => {
                let own = window.map(|w| op.history(w as usize) - 1).unwrap_or(0);
                own + args.iter().map(AlphaExpr::lookback).max().unwrap_or(0)
            }
            _ => 0,
        }
    }

    /// Pre-order list of node paths (argument indices from the root).
    pub fn paths(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        self.collect_paths(&mut cur, &mut out);
        out
    }

    fn collect_paths(&self, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        out.push(cur.clone());
        for (i, a) in self.args().iter().enumerate() {
            cur.push(i);
            a.collect_paths(cur, out);
            cur.pop();
        }
    }

    pub fn get(&self, path: &[usize]) -> Option<&AlphaExpr> {
        match path.split_first() {
            None => Some(self),
            Some((&i, rest)) => self.args().get(i)?.get(rest),
        }
    }

    /// Copy of `self` with the node at `path` replaced. Panics on a bad path.
    pub fn replaced(&self, path: &[usize], sub: AlphaExpr) -> AlphaExpr {
        match path.split_first() {
            None => sub,
            Some((&i, rest)) => match self {
                AlphaExpr::Call { op, args, window } => {
                    let mut args = args.clone();
                    args[i] = args[i].replaced(rest, sub);
                    AlphaExpr::Call {
                        op: *op,
                        args,
                        window: *window,
                    }
                }
                _ => panic!("path {path:?} descends into a leaf"),
            },
        }
    }

    /// Every feature referenced, in pre-order with repeats.
    pub fn features(&self) -> Vec<Feature> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let AlphaExpr::Feature(f) = e {
                out.push(*f);
            }
        });
        out
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a AlphaExpr)) {
        f(self);
        for a in self.args() {
            a.visit(f);
        }
    }

    /// Checks arity, windows, constants and size caps against `table`.
    pub fn validate_with(&self, table: &OperatorTable) -> Result<(), DslError> {
        self.check_node(table)?;
        let depth = self.depth();
        if depth > MAX_EXPR_DEPTH {
            return Err(DslError::TooDeep { depth });
        }
        let nodes = self.complexity();
        if nodes > MAX_EXPR_NODES {
            return Err(DslError::TooLarge { nodes });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), DslError> {
        self.validate_with(OperatorTable::standard())
    }

    fn check_node(&self, table: &OperatorTable) -> Result<(), DslError> {
        match self {
            AlphaExpr::Feature(_) => Ok(()),
            AlphaExpr::Const(c) => {
                if c.is_finite() && c.abs() <= CONST_LIMIT {
                    Ok(())
                } else {
                    Err(DslError::ConstantOutOfRange { value: *c, offset: 0 })
                }
            }
            AlphaExpr::Call { op, args, window } => {
                let spec = table.spec(*op).ok_or_else(|| DslError::UnknownIdentifier {
                    name: op.name().to_string(),
                    offset: 0,
                })?;
                if args.len() != spec.kind.arity() {
                    return Err(DslError::Arity {
                        name: op.name().to_string(),
                        expected: spec.kind.call_arity(),
                        found: args.len() + window.is_some() as usize,
                        offset: 0,
                    });
                }
                match (spec.kind.is_rolling(), window) {
                    (true, Some(w)) if (1..=MAX_WINDOW).contains(w) => {}
                    (true, Some(w)) => {
                        return Err(DslError::WindowOutOfRange {
                            window: *w as i64,
                            offset: 0,
                        })
                    }
                    (false, None) => {}
                    _ => {
                        return Err(DslError::Arity {
                            name: op.name().to_string(),
                            expected: spec.kind.call_arity(),
                            found: args.len() + window.is_some() as usize,
                            offset: 0,
                        })
                    }
                }
                args.iter().try_for_each(|a| a.check_node(table))
            }
        }
    }
}

impl fmt::Display for AlphaExpr {
    /// Fully parenthesized text; `parse` of the output rebuilds the same AST.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaExpr::Feature(feat) => write!(f, "{feat}"),
            AlphaExpr::Const(c) if c.is_sign_negative() => write!(f, "({c})"),
            AlphaExpr::Const(c) => write!(f, "{c}"),
            AlphaExpr::Call { op, args, window } => {
                if let (Some(sym), [l, r]) = (op.infix_symbol(), args.as_slice()) {
                    return write!(f, "({l} {sym} {r})");
                }
                write!(f, "{}(", op.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                if let Some(w) = window {
                    write!(f, ", {w}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl FromStr for AlphaExpr {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self, DslError> {
        parse(s)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DslError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{name}` takes {expected} arguments, got {found} (byte {offset})")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },
    #[error("window {window} at byte {offset} outside 1..={MAX_WINDOW}")]
    WindowOutOfRange { window: i64, offset: usize },
    #[error("constant {value} at byte {offset} outside [-{CONST_LIMIT}, {CONST_LIMIT}]")]
    ConstantOutOfRange { value: f64, offset: usize },
    #[error("expression depth {depth} exceeds {MAX_EXPR_DEPTH}")]
    TooDeep { depth: usize },
    #[error("expression has {nodes} nodes, more than {MAX_EXPR_NODES}")]
    TooLarge { nodes: usize },
}

impl DslError {
    /// Byte offset into the source text, where one applies.
    pub fn offset(&self) -> Option<usize> {
        match self {
            DslError::Syntax { offset, .. }
            | DslError::UnknownIdentifier { offset, .. }
            | DslError::Arity { offset, .. }
            | DslError::WindowOutOfRange { offset, .. }
            | DslError::ConstantOutOfRange { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

impl From<Feature> for AlphaExpr {
    fn from(f: Feature) -> Self {
        AlphaExpr::Feature(f)
    }
}
