//! Boolean predicates over named numeric features, as used in rule files.
//!
//! ```text
//! ratio < 0.85
//! left_volume in [120, 200] && right_volume in [120, 200]
//! !(min_volume >= 120) || true
//! ```
//!
//! A comparison against a feature that is not present evaluates to false.

use alloc::borrow::ToOwned;
use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("predicate parse error at byte {at}: {message}")]
pub struct PredicateError {
    pub at: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Const(bool),
    Cmp { var: String, op: CmpOp, value: f64 },
    InRange { var: String, lo: f64, hi: f64 },
    Not(Box<Predicate>),
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
}

impl Predicate {
    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> bool {
        match self {
            Predicate::Const(b) => *b,
            Predicate::Cmp { var, op, value } => lookup(var).is_some_and(|x| match op {
                CmpOp::Lt => x < *value,
                CmpOp::Le => x <= *value,
                CmpOp::Gt => x > *value,
                CmpOp::Ge => x >= *value,
                CmpOp::Eq => x == *value,
                CmpOp::Ne => x != *value,
            }),
            Predicate::InRange { var, lo, hi } => lookup(var).is_some_and(|x| *lo <= x && x <= *hi),
            Predicate::Not(p) => !p.eval(lookup),
            Predicate::And(ps) => ps.iter().all(|p| p.eval(lookup)),
            Predicate::Or(ps) => ps.iter().any(|p| p.eval(lookup)),
        }
    }

    pub fn parse(src: &str) -> Result<Self, PredicateError> {
        let mut p = Parser { src, pos: 0 };
        let expr = p.or()?;
        p.skip_ws();
        if p.pos != src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(expr)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> PredicateError {
        PredicateError {
            at: self.pos,
            message: message.to_owned(),
        }
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), PredicateError> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.error(&format!("expected {token:?}")))
        }
    }

    fn or(&mut self) -> Result<Predicate, PredicateError> {
        let mut terms = alloc::vec![self.and()?];
        while self.eat("||") {
            terms.push(self.and()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Predicate::Or(terms) })
    }

    fn and(&mut self) -> Result<Predicate, PredicateError> {
        let mut terms = alloc::vec![self.unary()?];
        while self.eat("&&") {
            terms.push(self.unary()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Predicate::And(terms) })
    }

    fn unary(&mut self) -> Result<Predicate, PredicateError> {
        if self.eat("!") {
            return Ok(Predicate::Not(Box::new(self.unary()?)));
        }
        if self.eat("(") {
            let inner = self.or()?;
            self.expect(")")?;
            return Ok(inner);
        }
        let ident = self.ident()?;
        match ident.as_str() {
            "true" => return Ok(Predicate::Const(true)),
            "false" => return Ok(Predicate::Const(false)),
            _ => {}
        }
        self.skip_ws();
        if self.rest().starts_with("in") && !self.rest()[2..].starts_with(|c: char| c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 2;
            self.expect("[")?;
            let lo = self.number()?;
            self.expect(",")?;
            let hi = self.number()?;
            self.expect("]")?;
            return Ok(Predicate::InRange { var: ident, lo, hi });
        }
        let op = [
            ("<=", CmpOp::Le),
            (">=", CmpOp::Ge),
            ("==", CmpOp::Eq),
            ("!=", CmpOp::Ne),
            ("<", CmpOp::Lt),
            (">", CmpOp::Gt),
        ]
        .into_iter()
        .find(|(tok, _)| self.eat(tok))
        .map(|(_, op)| op)
        .ok_or_else(|| self.error("expected comparison operator or 'in'"))?;
        let value = self.number()?;
        Ok(Predicate::Cmp { var: ident, op, value })
    }

    fn ident(&mut self) -> Result<String, PredicateError> {
        self.skip_ws();
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(self.rest().len());
        if len == 0 || self.rest().starts_with(|c: char| c.is_ascii_digit()) {
            return Err(self.error("expected identifier"));
        }
        let ident = self.rest()[..len].to_owned();
        self.pos += len;
        Ok(ident)
    }

    fn number(&mut self) -> Result<f64, PredicateError> {
        self.skip_ws();
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
            .unwrap_or(self.rest().len());
        let value = self.rest()[..len]
            .parse::<f64>()
            .map_err(|_| self.error("expected number"))?;
        self.pos += len;
        Ok(value)
    }
}
