//! Small expression language for coefficients, terminal payoffs and custom
//! nonlinearities.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Names: `t`, `T` (horizon), `z`, `x` / `x1` / `x_1` (value at `t`),
//! `int_x` / `int_x1` / `int_x_1` (`∫_0^t x_i ds`), `pi`. Functions: `exp`,
//! `log`, `sqrt`, `abs`, `sin`, `cos`, `min`, `max`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::nonlinearity::{DomainInterval, Nonlinearity};
use crate::path::DiscretePath;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "exp" => (Func::Exp, 1),
            "log" => (Func::Log, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Time,
    Horizon,
    Z,
    X(usize),
    IntX(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

struct Usage {
    time: bool,
    path: bool,
    z: bool,
    max_index: Option<usize>,
}

impl Node {
    fn eval(&self, t: f64, horizon: f64, z: f64, x: Option<&DiscretePath>) -> f64 {
        let ev = |n: &Node| n.eval(t, horizon, z, x);
        match self {
            Node::Num(v) => *v,
            Node::Time => t,
            Node::Horizon => horizon,
            Node::Z => z,
            Node::X(i) => x.map_or(f64::NAN, |p| p.coord_at(t, *i)),
            Node::IntX(i) => x.map_or(f64::NAN, |p| p.integral(t, *i)),
            Node::Neg(a) => -ev(a),
            Node::Add(a, b) => ev(a) + ev(b),
            Node::Sub(a, b) => ev(a) - ev(b),
            Node::Mul(a, b) => ev(a) * ev(b),
            Node::Div(a, b) => ev(a) / ev(b),
            Node::Pow(a, b) => {
                let (base, e) = (ev(a), ev(b));
                if e == 2.0 {
                    base * base
                } else if e.fract() == 0.0 && e.abs() < 64.0 {
                    base.powi(e as i32)
                } else {
                    base.powf(e)
                }
            }
            Node::Call(f, args) => {
                let a = ev(&args[0]);
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Min => a.min(ev(&args[1])),
                    Func::Max => a.max(ev(&args[1])),
                }
            }
        }
    }

    fn usage(&self, u: &mut Usage) {
        match self {
            Node::Num(_) | Node::Horizon => {}
            Node::Time => u.time = true,
            Node::Z => u.z = true,
            Node::X(i) | Node::IntX(i) => {
                u.path = true;
                u.max_index = Some(u.max_index.map_or(*i, |m| m.max(*i)));
            }
            Node::Neg(a) => a.usage(u),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b) => {
                a.usage(u);
                b.usage(u);
            }
            Node::Call(_, args) => args.iter().for_each(|a| a.usage(u)),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, pos: usize, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            position: pos,
            message: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let start = match self.peek() {
            Some(_) => self.pos,
            None => return self.err(self.pos, "unexpected end of expression"),
        };
        let c = self.bytes[start];
        if c == b'(' {
            self.pos += 1;
            let inner = self.expr()?;
            if !self.eat(b')') {
                return self.err(self.pos, "expected ')'");
            }
            return Ok(inner);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let name = self.ident();
            if self.peek() == Some(b'(') {
                let Some((func, arity)) = Func::lookup(name) else {
                    return self.err(start, format!("unknown function '{name}'"));
                };
                self.pos += 1;
                let mut args = vec![self.expr()?];
                while self.eat(b',') {
                    args.push(self.expr()?);
                }
                if !self.eat(b')') {
                    return self.err(self.pos, "expected ')' after arguments");
                }
                if args.len() != arity {
                    return self.err(
                        start,
                        format!("{name} takes {arity} argument(s), got {}", args.len()),
                    );
                }
                return Ok(Node::Call(func, args));
            }
            return self.variable(name, start);
        }
        self.err(start, format!("unexpected character '{}'", c as char))
    }

    fn ident(&mut self) -> &'a str {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        &self.src[start..self.pos]
    }

    fn variable(&self, name: &str, start: usize) -> Result<Node> {
        let index = |rest: &str| -> Result<usize> {
            let rest = rest.strip_prefix('_').unwrap_or(rest);
            if rest.is_empty() {
                return Ok(0);
            }
            match rest.parse::<usize>() {
                Ok(i) if i >= 1 => Ok(i - 1),
                _ => self.err(start, format!("bad coordinate index in '{name}'")),
            }
        };
        match name {
            "t" => Ok(Node::Time),
            "T" => Ok(Node::Horizon),
            "z" => Ok(Node::Z),
            "pi" => Ok(Node::Num(std::f64::consts::PI)),
            _ if name.starts_with("int_x") => Ok(Node::IntX(index(&name[5..])?)),
            _ if name.starts_with('x') => Ok(Node::X(index(&name[1..])?)),
            _ => self.err(start, format!("unknown name '{name}'")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_digit() || b[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < b.len() && (b[self.pos] == b'+' || b[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos < b.len() && b[self.pos].is_ascii_digit() {
                while self.pos < b.len() && b[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        match self.src[start..self.pos].parse::<f64>() {
            Ok(v) => Ok(Node::Num(v)),
            Err(_) => self.err(
                start,
                format!("bad number '{}'", &self.src[start..self.pos]),
            ),
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        };
        let root = p.expr()?;
        if p.peek().is_some() {
            return p.err(
                p.pos,
                format!("unexpected trailing input '{}'", &src[p.pos..]),
            );
        }
        Ok(Self {
            source: src.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn usage(&self) -> Usage {
        let mut u = Usage {
            time: false,
            path: false,
            z: false,
            max_index: None,
        };
        self.root.usage(&mut u);
        u
    }

    pub fn uses_z(&self) -> bool {
        self.usage().z
    }

    pub fn uses_path(&self) -> bool {
        self.usage().path
    }

    /// Evaluates at `(t, x, z)`.
    pub fn eval(&self, t: f64, horizon: f64, z: f64, x: &DiscretePath) -> f64 {
        self.root.eval(t, horizon, z, Some(x))
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if let Some(i) = self.usage().max_index {
            if i >= dim {
                return Err(Error::validation(format!(
                    "expression '{}' refers to coordinate {} but the dimension is {dim}",
                    self.source,
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// The expression as a functional of `(t, x)`; `z` is not allowed.
    pub fn to_functional(&self, dim: usize, horizon: f64) -> Result<Functional> {
        self.check_dim(dim)?;
        let u = self.usage();
        if u.z {
            return Err(Error::validation(format!(
                "'{}' uses z outside a nonlinearity",
                self.source
            )));
        }
        if !u.time && !u.path {
            let v = self.root.eval(0.0, horizon, 0.0, None);
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "'{}' evaluates to {v}",
                    self.source
                )));
            }
            return Ok(Functional::constant(v));
        }
        let root = Arc::new(self.root.clone());
        Ok(Functional::new(self.source.clone(), move |t, x| {
            root.eval(t, horizon, 0.0, Some(x))
        })
        .with_path_independent(!u.path))
    }

    /// The expression as `f(t, x, z)` on `domain`.
    pub fn to_nonlinearity(
        &self,
        dim: usize,
        horizon: f64,
        domain: DomainInterval,
    ) -> Result<Nonlinearity> {
        self.check_dim(dim)?;
        let root = Arc::new(self.root.clone());
        let path_independent = !self.usage().path;
        Ok(Nonlinearity::custom(
            self.source.clone(),
            domain,
            path_independent,
            move |t, x, z| Ok(root.eval(t, horizon, z, Some(x))),
        ))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::assert_nonanticipative;
    use crate::path::TimeGrid;

    fn path() -> DiscretePath {
        DiscretePath::scalar(Arc::new(TimeGrid::uniform(1.0, 10).unwrap()), |s| 2.0 * s).unwrap()
    }

    fn ev(src: &str) -> f64 {
        Expr::parse(src).unwrap().eval(0.5, 1.0, 3.0, &path())
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("1 + 2 * 3"), 7.0);
        assert_eq!(ev("(1 + 2) * 3"), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2"), 512.0);
        assert_eq!(ev("-2 ^ 2"), -4.0);
        assert_eq!(ev("1e-1 * 10"), 1.0);
        assert_eq!(ev("max(1, min(4, 2))"), 2.0);
        assert_eq!(ev("exp(0) + abs(-2) + sqrt(9)"), 6.0);
    }

    #[test]
    fn variables() {
        assert_eq!(ev("t"), 0.5);
        assert_eq!(ev("T - t"), 0.5);
        assert_eq!(ev("z^2"), 9.0);
        assert_eq!(ev("x"), 1.0);
        assert_eq!(ev("x1 + x_1"), 2.0);
        // ∫_0^0.5 2s ds = 0.25
        assert!((ev("int_x") - 0.25).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_carry_position() {
        match Expr::parse("1 + * 2") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 4),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("foo(1)").is_err());
        assert!(Expr::parse("y").is_err());
        assert!(Expr::parse("(1").is_err());
        assert!(Expr::parse("max(1)").is_err());
        assert!(Expr::parse("1 2").is_err());
        assert!(Expr::parse("x0").is_err());
    }

    #[test]
    fn functionals_from_expressions() {
        let f = Expr::parse("2 * 3").unwrap().to_functional(1, 1.0).unwrap();
        assert_eq!(f.as_constant(), Some(6.0));
        let f = Expr::parse("T - t").unwrap().to_functional(1, 1.0).unwrap();
        assert!(f.is_path_independent());
        let f = Expr::parse("x^2 + int_x")
            .unwrap()
            .to_functional(1, 1.0)
            .unwrap();
        assert!(!f.is_path_independent());
        assert_nonanticipative(&f, &[path()], &[0.0, 0.25, 0.5, 1.0]).unwrap();
        assert!(Expr::parse("z").unwrap().to_functional(1, 1.0).is_err());
        assert!(Expr::parse("x2").unwrap().to_functional(1, 1.0).is_err());
    }

    #[test]
    fn nonlinearity_from_expression() {
        let f = Expr::parse("z^2")
            .unwrap()
            .to_nonlinearity(1, 1.0, DomainInterval::nonnegative())
            .unwrap();
        assert!(f.is_path_independent());
        assert_eq!(f.eval(0.0, &path(), 3.0).unwrap(), 9.0);
        assert!(f.eval(0.0, &path(), -1.0).is_err());
    }
}
