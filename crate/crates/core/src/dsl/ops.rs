use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Unary,
    Binary,
    RollingUnary,
    RollingBinary,
    CrossSectional,
}

impl OpKind {
    /// Number of expression arguments.
    pub fn arity(self) -> usize {
        match self {
            OpKind::Unary | OpKind::RollingUnary | OpKind::CrossSectional => 1,
            OpKind::Binary | OpKind::RollingBinary => 2,
        }
    }

    /// Arguments as written in call syntax, window included.
    pub fn call_arity(self) -> usize {
        self.arity() + self.is_rolling() as usize
    }

    pub fn is_rolling(self) -> bool {
        matches!(self, OpKind::RollingUnary | OpKind::RollingBinary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Neg,
    Abs,
    Log1pSigned,
    Sign,
    Inv,
    Add,
    Sub,
    Mul,
    DivSafe,
    Max,
    Min,
    PowSigned,
    TsMean,
    TsStd,
    TsSum,
    TsMin,
    TsMax,
    TsDelta,
    TsDelay,
    TsRank,
    TsCorr,
    TsCov,
    CsRank,
}

impl Op {
    pub fn name(self) -> &'static str {
        spec_of(self).name
    }

    pub fn kind(self) -> OpKind {
        spec_of(self).kind
    }

    pub fn infix_symbol(self) -> Option<&'static str> {
        match self {
            Op::Add => Some("+"),
            Op::Sub => Some("-"),
            Op::Mul => Some("*"),
            Op::DivSafe => Some("/"),
            _ => None,
        }
    }

    /// Consecutive observations a rolling operator reads for window `w`.
    pub fn history(self, w: usize) -> usize {
        match self {
            Op::TsDelta | Op::TsDelay => w + 1,
            _ => w,
        }
    }
}

/// One row of the operator table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OperatorSpec {
    pub op: Op,
    pub name: &'static str,
    pub kind: OpKind,
    pub semantics: &'static str,
}

const fn row(op: Op, name: &'static str, kind: OpKind, semantics: &'static str) -> OperatorSpec {
    OperatorSpec {
        op,
        name,
        kind,
        semantics,
    }
}

const STANDARD: [OperatorSpec; 23] = [
    row(Op::Neg, "neg", OpKind::Unary, "-x"),
    row(Op::Abs, "abs", OpKind::Unary, "|x|"),
    row(Op::Log1pSigned, "log1p_signed", OpKind::Unary, "sign(x) * ln(1 + |x|)"),
    row(Op::Sign, "sign", OpKind::Unary, "-1, 0 or 1"),
    row(Op::Inv, "inv", OpKind::Unary, "1 / x, missing when |x| < 1e-12"),
    row(Op::Add, "add", OpKind::Binary, "x + y"),
    row(Op::Sub, "sub", OpKind::Binary, "x - y"),
    row(Op::Mul, "mul", OpKind::Binary, "x * y"),
    row(Op::DivSafe, "div_safe", OpKind::Binary, "x / y, missing when |y| < 1e-12"),
    row(Op::Max, "max", OpKind::Binary, "elementwise maximum"),
    row(Op::Min, "min", OpKind::Binary, "elementwise minimum"),
    row(Op::PowSigned, "pow_signed", OpKind::Binary, "sign(x) * |x|^y"),
    row(Op::TsMean, "ts_mean", OpKind::RollingUnary, "mean over the last w days"),
    row(Op::TsStd, "ts_std", OpKind::RollingUnary, "population std over the last w days"),
    row(Op::TsSum, "ts_sum", OpKind::RollingUnary, "sum over the last w days"),
    row(Op::TsMin, "ts_min", OpKind::RollingUnary, "minimum over the last w days"),
    row(Op::TsMax, "ts_max", OpKind::RollingUnary, "maximum over the last w days"),
    row(Op::TsDelta, "ts_delta", OpKind::RollingUnary, "x[t] - x[t-w]"),
    row(Op::TsDelay, "ts_delay", OpKind::RollingUnary, "x[t-w]"),
    row(Op::TsRank, "ts_rank", OpKind::RollingUnary, "percentile of x[t] in the last w days, in [0,1]"),
    row(Op::TsCorr, "ts_corr", OpKind::RollingBinary, "Pearson correlation over the last w days"),
    row(Op::TsCov, "ts_cov", OpKind::RollingBinary, "population covariance over the last w days"),
    row(Op::CsRank, "cs_rank", OpKind::CrossSectional, "rank across stocks within a day, in [0,1]"),
];

fn spec_of(op: Op) -> &'static OperatorSpec {
    // STANDARD is declared in enum order
    &STANDARD[op as usize]
}

/// The operator vocabulary accepted by the parser and sampled by the
/// random generator. Evaluation semantics are fixed per [`Op`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorTable {
    specs: Vec<OperatorSpec>,
}

impl OperatorTable {
    pub fn standard() -> &'static OperatorTable {
        static TABLE: OnceLock<OperatorTable> = OnceLock::new();
        TABLE.get_or_init(|| OperatorTable {
            specs: STANDARD.to_vec(),
        })
    }

    /// A sub-table holding only the named operators. Unknown names are returned as the error.
    pub fn restricted<S: AsRef<str>>(names: &[S]) -> Result<OperatorTable, String> {
        let mut specs = Vec::new();
        for name in names {
            let name = name.as_ref();
            let spec = STANDARD
                .iter()
                .find(|s| s.name == name)
                .ok_or_else(|| name.to_string())?;
            if !specs.contains(spec) {
                specs.push(*spec);
            }
        }
        Ok(OperatorTable { specs })
    }

    pub fn lookup(&self, name: &str) -> Option<&OperatorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn spec(&self, op: Op) -> Option<&OperatorSpec> {
        self.specs.iter().find(|s| s.op == op)
    }

    pub fn specs(&self) -> &[OperatorSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Grammar summary embedded in prompts.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for s in &self.specs {
            let sig = match s.kind {
                OpKind::Unary | OpKind::CrossSectional => format!("{}(x)", s.name),
                OpKind::Binary => format!("{}(x, y)", s.name),
                OpKind::RollingUnary => format!("{}(x, w)", s.name),
                OpKind::RollingBinary => format!("{}(x, y, w)", s.name),
            };
            out.push_str(&format!("- {sig}: {}\n", s.semantics));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_enum_ordered_and_unique() {
        for (i, s) in STANDARD.iter().enumerate() {
            assert_eq!(s.op as usize, i);
        }
        let mut names: Vec<_> = STANDARD.iter().map(|s| s.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), STANDARD.len());
    }

    #[test]
    fn restricted_table() {
        let t = OperatorTable::restricted(&["add", "ts_mean"]).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.lookup("sub").is_none());
        assert_eq!(OperatorTable::restricted(&["nope"]), Err("nope".to_string()));
    }
}
