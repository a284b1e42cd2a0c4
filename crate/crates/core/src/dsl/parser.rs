//! Recursive-descent parser.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | feature | name '(' args ')' | '(' expr ')'
//! args    := arg (',' arg)*          window arguments must be integer literals
//! ```

use super::{AlphaExpr, DslError, Feature, Op, OperatorTable, CONST_LIMIT, MAX_WINDOW};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number { text: String, value: f64 },
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    End,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, DslError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b',' => out.push((Tok::Comma, start)),
            b'+' => out.push((Tok::Plus, start)),
            b'-' => out.push((Tok::Minus, start)),
            b'*' => out.push((Tok::Star, start)),
            b'/' => out.push((Tok::Slash, start)),
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    let frac_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac_start {
                        return Err(DslError::Syntax {
                            offset: start,
                            message: "expected digits after decimal point".into(),
                        });
                    }
                }
                let text = &src[start..i];
                let value = text.parse::<f64>().map_err(|e| DslError::Syntax {
                    offset: start,
                    message: e.to_string(),
                })?;
                out.push((
                    Tok::Number {
                        text: text.to_string(),
                        value,
                    },
                    start,
                ));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(DslError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser<'t> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    table: &'t OperatorTable,
}

enum Arg {
    Expr(AlphaExpr),
    Literal { text: String, value: f64, offset: usize },
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, ahead: usize) -> &Tok {
        let i = (self.pos + ahead).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, DslError> {
        Err(DslError::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), DslError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.syntax(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<AlphaExpr, DslError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => Op::Add,
                Tok::Minus => Op::Sub,
                _ => return Ok(lhs),
            };
            let (_, at) = self.bump();
            self.require_op(op, at)?;
            let rhs = self.term()?;
            lhs = AlphaExpr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<AlphaExpr, DslError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => Op::Mul,
                Tok::Slash => Op::DivSafe,
                _ => return Ok(lhs),
            };
            let (_, at) = self.bump();
            self.require_op(op, at)?;
            let rhs = self.unary()?;
            lhs = AlphaExpr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<AlphaExpr, DslError> {
        if *self.peek() == Tok::Minus {
            let (_, at) = self.bump();
            // a minus directly on a literal is a negative constant
            if let Tok::Number { value, .. } = self.peek().clone() {
                self.bump();
                return constant(-value, at);
            }
            let inner = self.unary()?;
            self.require_op(Op::Neg, at)?;
            return Ok(AlphaExpr::call(Op::Neg, vec![inner]));
        }
        self.primary()
    }

    fn require_op(&self, op: Op, offset: usize) -> Result<(), DslError> {
        if self.table.spec(op).is_some() {
            Ok(())
        } else {
            Err(DslError::UnknownIdentifier {
                name: op.name().to_string(),
                offset,
            })
        }
    }

    fn primary(&mut self) -> Result<AlphaExpr, DslError> {
        let at = self.offset();
        match self.bump().0 {
            Tok::Number { value, .. } => constant(value, at),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    self.call(name, at)
                } else {
                    name.parse::<Feature>()
                        .map(AlphaExpr::Feature)
                        .map_err(|_| DslError::UnknownIdentifier { name, offset: at })
                }
            }
            Tok::End => Err(DslError::Syntax {
                offset: at,
                message: "unexpected end of input".into(),
            }),
            other => Err(DslError::Syntax {
                offset: at,
                message: format!("unexpected {}", describe(&other)),
            }),
        }
    }

    fn arg(&mut self) -> Result<Arg, DslError> {
        if let Tok::Number { text, value } = self.peek().clone() {
            if matches!(self.peek_at(1), Tok::Comma | Tok::RParen) {
                let offset = self.offset();
                self.bump();
                return Ok(Arg::Literal { text, value, offset });
            }
        }
        self.expr().map(Arg::Expr)
    }

    fn call(&mut self, name: String, at: usize) -> Result<AlphaExpr, DslError> {
        let spec = *self.table.lookup(&name).ok_or_else(|| DslError::UnknownIdentifier {
            name: name.clone(),
            offset: at,
        })?;
        self.expect(Tok::LParen, "`(`")?;
        let mut raw = Vec::new();
        if *self.peek() != Tok::RParen {
            raw.push(self.arg()?);
            while *self.peek() == Tok::Comma {
                self.bump();
                raw.push(self.arg()?);
            }
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        if raw.len() != spec.kind.call_arity() {
            return Err(DslError::Arity {
                name,
                expected: spec.kind.call_arity(),
                found: raw.len(),
                offset: at,
            });
        }
        let window = if spec.kind.is_rolling() {
            match raw.pop() {
                Some(Arg::Literal { text, value, offset }) => {
                    if text.contains('.') {
                        return Err(DslError::Syntax {
                            offset,
                            message: "window must be an integer literal".into(),
                        });
                    }
                    if value < 1.0 || value > MAX_WINDOW as f64 {
                        return Err(DslError::WindowOutOfRange {
                            window: value as i64,
                            offset,
                        });
                    }
                    Some(value as u16)
                }
                _ => {
                    return Err(DslError::Syntax {
                        offset: at,
                        message: format!("last argument of `{name}` must be an integer window"),
                    })
                }
            }
        } else {
            None
        };
        let mut args = Vec::with_capacity(raw.len());
        for a in raw {
            args.push(match a {
                Arg::Expr(e) => e,
                Arg::Literal { value, offset, .. } => constant(value, offset)?,
            });
        }
        debug_assert_eq!(args.len(), spec.kind.arity());
        Ok(AlphaExpr::Call {
            op: spec.op,
            args,
            window,
        })
    }
}

fn constant(value: f64, offset: usize) -> Result<AlphaExpr, DslError> {
    if value.is_finite() && value.abs() <= CONST_LIMIT {
        Ok(AlphaExpr::Const(value))
    } else {
        Err(DslError::ConstantOutOfRange { value, offset })
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Number { text, .. } => format!("number `{text}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::End => "end of input".into(),
    }
}

/// Parses against the standard operator table.
pub fn parse(src: &str) -> Result<AlphaExpr, DslError> {
    parse_with(src, OperatorTable::standard())
}

pub fn parse_with(src: &str, table: &OperatorTable) -> Result<AlphaExpr, DslError> {
    let mut p = Parser {
        toks: tokenize(src)?,
        pos: 0,
        table,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.syntax(format!("unexpected {} after expression", describe(p.peek())));
    }
    e.validate_with(table)?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{random_expr, Feature::*};
    use proptest::prelude::*;

    fn f(x: Feature) -> AlphaExpr {
        AlphaExpr::Feature(x)
    }

    #[test]
    fn single_feature() {
        assert_eq!(parse("close").unwrap(), f(Close));
    }

    #[test]
    fn volume_weighted_return_precedence() {
        let e = parse("(close - open) / open * volume").unwrap();
        let expected = AlphaExpr::binary(
            Op::Mul,
            AlphaExpr::binary(Op::DivSafe, AlphaExpr::binary(Op::Sub, f(Close), f(Open)), f(Open)),
            f(Volume),
        );
        assert_eq!(e, expected);
        assert_eq!(e.to_string(), "(((close - open) / open) * volume)");
    }

    #[test]
    fn window_out_of_range() {
        assert!(matches!(
            parse("ts_mean(close, 0)"),
            Err(DslError::WindowOutOfRange { window: 0, offset: 15 })
        ));
        assert!(matches!(parse("ts_mean(close, 251)"), Err(DslError::WindowOutOfRange { .. })));
    }

    #[test]
    fn window_must_be_integer_literal() {
        assert!(matches!(parse("ts_mean(close, 2.5)"), Err(DslError::Syntax { .. })));
        assert!(matches!(parse("ts_mean(close, close)"), Err(DslError::Syntax { .. })));
    }

    #[test]
    fn unknown_identifiers() {
        assert_eq!(
            parse("close + amount"),
            Err(DslError::UnknownIdentifier {
                name: "amount".into(),
                offset: 8
            })
        );
        assert!(matches!(parse("foo(close)"), Err(DslError::UnknownIdentifier { .. })));
        // operator names are not features
        assert!(matches!(parse("abs"), Err(DslError::UnknownIdentifier { .. })));
    }

    #[test]
    fn arity_mismatch() {
        assert!(matches!(
            parse("ts_corr(close, 5)"),
            Err(DslError::Arity { expected: 3, found: 2, .. })
        ));
        assert!(matches!(parse("abs(close, open)"), Err(DslError::Arity { .. })));
    }

    #[test]
    fn syntax_errors_report_offset() {
        let err = parse("close +").unwrap_err();
        assert_eq!(err.offset(), Some(7));
        let err = parse("close $ open").unwrap_err();
        assert_eq!(err.offset(), Some(6));
        assert!(parse("(close").is_err());
        assert!(parse("close open").is_err());
    }

    #[test]
    fn negative_literals_and_neg() {
        assert_eq!(parse("-2.5").unwrap(), AlphaExpr::Const(-2.5));
        assert_eq!(parse("-close").unwrap(), AlphaExpr::call(Op::Neg, vec![f(Close)]));
        assert_eq!(
            parse("neg(2.5)").unwrap(),
            AlphaExpr::call(Op::Neg, vec![AlphaExpr::Const(2.5)])
        );
        assert!(matches!(parse("150"), Err(DslError::ConstantOutOfRange { .. })));
    }

    #[test]
    fn named_infix_ops_parse_to_same_ast() {
        assert_eq!(parse("add(close, open)").unwrap(), parse("close + open").unwrap());
        assert_eq!(parse("div_safe(close, open)").unwrap(), parse("close / open").unwrap());
    }

    #[test]
    fn restricted_table_rejects_others() {
        let t = OperatorTable::restricted(&["add", "sub"]).unwrap();
        assert!(parse_with("close - open", &t).is_ok());
        assert!(parse_with("close * open", &t).is_err());
        assert!(parse_with("ts_mean(close, 3)", &t).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn print_parse_identity(seed in any::<u64>(), depth in 1usize..=8) {
            let e = random_expr(seed, depth);
            let text = e.to_string();
            prop_assert_eq!(parse(&text).unwrap(), e);
        }
    }
}
