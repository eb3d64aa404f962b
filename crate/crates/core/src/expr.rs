//! Polynomial expressions in the state `x` (`x1`, `x2`, `x3`; `x` is `x1`)
//! and a scalar control value `a`.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor ('*' factor)*
//! factor := ('-' | '+') factor | power
//! power  := atom ('^' integer)?
//! atom   := number | 'x' | 'x1' | 'x2' | 'x3' | 'a' | '(' expr ')'
//! ```

use std::fmt;

use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    /// Coordinate index, 0-based.
    X(usize),
    A,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Pow(Box<Node>, u32),
}

impl Node {
    fn eval(&self, x: &[f64], a: f64) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::X(i) => x[*i],
            Node::A => a,
            Node::Neg(n) => -n.eval(x, a),
            Node::Add(l, r) => l.eval(x, a) + r.eval(x, a),
            Node::Sub(l, r) => l.eval(x, a) - r.eval(x, a),
            Node::Mul(l, r) => l.eval(x, a) * r.eval(x, a),
            Node::Pow(b, k) => b.eval(x, a).powi(*k as i32),
        }
    }

    fn max_coord(&self) -> Option<usize> {
        match self {
            Node::X(i) => Some(*i),
            Node::Num(_) | Node::A => None,
            Node::Neg(n) | Node::Pow(n, _) => n.max_coord(),
            Node::Add(l, r) | Node::Sub(l, r) | Node::Mul(l, r) => l.max_coord().max(r.max_coord()),
        }
    }

    fn uses_a(&self) -> bool {
        match self {
            Node::A => true,
            Node::Num(_) | Node::X(_) => false,
            Node::Neg(n) | Node::Pow(n, _) => n.uses_a(),
            Node::Add(l, r) | Node::Sub(l, r) | Node::Mul(l, r) => l.uses_a() || r.uses_a(),
        }
    }
}

/// A parsed polynomial.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser { s: src.as_bytes(), pos: 0, src };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Expr { source: src.trim().to_string(), root })
    }

    pub fn eval(&self, x: &[f64], a: f64) -> f64 {
        self.root.eval(x, a)
    }

    /// Number of state coordinates referenced (`x3` needs 3).
    pub fn min_dim(&self) -> usize {
        self.root.max_coord().map_or(0, |i| i + 1)
    }

    pub fn uses_control(&self) -> bool {
        self.root.uses_a()
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> LabError {
        LabError::Config(format!("expression {:?}: {msg} at offset {}", self.src, self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == b'+' { Node::Add(lhs.into(), rhs.into()) } else { Node::Sub(lhs.into(), rhs.into()) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            lhs = Node::Mul(lhs.into(), self.factor()?.into());
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(self.factor()?.into()))
            }
            Some(b'+') => {
                self.pos += 1;
                self.factor()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.error("exponent must be a non-negative integer"));
            }
            let k: u32 = self.src[start..self.pos].parse().map_err(|_| self.error("exponent too large"))?;
            if k > 16 {
                return Err(self.error("exponent above 16"));
            }
            return Ok(Node::Pow(base.into(), k));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                match &self.src[start..self.pos] {
                    "x" | "x1" => Ok(Node::X(0)),
                    "x2" => Ok(Node::X(1)),
                    "x3" => Ok(Node::X(2)),
                    "a" => Ok(Node::A),
                    other => {
                        self.pos = start;
                        Err(self.error(&format!("unknown name {other:?}")))
                    }
                }
            }
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.s.len() && p.s[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.pos < self.s.len() && self.s[self.pos] == b'.' {
            self.pos += 1;
            digits(self);
        }
        if self.pos < self.s.len() && matches!(self.s[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.s.len() && matches!(self.s[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if exp_start == self.pos {
                self.pos = save;
            }
        }
        self.src[start..self.pos].parse::<f64>().map(Node::Num).map_err(|_| {
            self.pos = start;
            self.error("malformed number")
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn evaluates_polynomials() {
        let e = Expr::parse("1 + 2*x - x^2").unwrap();
        assert_eq!(e.eval(&[3.0], 0.0), -2.0);
        let e = Expr::parse("a^2 + x1*x2 - 0.5e1").unwrap();
        assert_eq!(e.eval(&[2.0, 3.0], 1.5), 2.25 + 6.0 - 5.0);
        assert_eq!(e.min_dim(), 2);
        assert!(e.uses_control());
        let e = Expr::parse("-(x - 1)^2 * -3").unwrap();
        assert_eq!(e.eval(&[0.0], 0.0), 3.0);
        assert_eq!(Expr::parse("  7 ").unwrap().min_dim(), 0);
        assert_eq!(Expr::parse("-x^2").unwrap().eval(&[2.0], 0.0), -4.0);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in ["", "x +", "sin(x)", "x^-1", "x^1.5", "(x", "x)", "2 x", "y", "x^99", "1..2"] {
            assert!(Expr::parse(bad).is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn matches_direct_evaluation(c0 in -5.0..5.0f64, c1 in -5.0..5.0f64, c2 in -5.0..5.0f64, x in -2.0..2.0f64, a in -2.0..2.0f64) {
            let src = format!("{c0} + {c1}*x + {c2}*x^2*a");
            let e = Expr::parse(&src).unwrap();
            let direct = c0 + c1 * x + c2 * x * x * a;
            prop_assert!((e.eval(&[x], a) - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }
}
