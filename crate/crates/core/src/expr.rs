//! Small expression language shared by time coefficients and homogeneous phases.
//!
//! Two dialects: [`Dialect::Coefficient`] knows the variable `t`, `exp`, and
//! integer powers; [`Dialect::Phase`] knows `xi1..xiN`, `exp`, `sqrt`, `abs`
//! and real powers. Unary minus binds looser than `^`, so `-t^2` is `-(t^2)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Dialect {
    Coefficient,
    Phase { n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node<T> {
    Const(T),
    Var(usize),
    Neg(Box<Node<T>>),
    Add(Box<Node<T>>, Box<Node<T>>),
    Sub(Box<Node<T>>, Box<Node<T>>),
    Mul(Box<Node<T>>, Box<Node<T>>),
    Div(Box<Node<T>>, Box<Node<T>>),
    PowI(Box<Node<T>>, i32),
    PowF(Box<Node<T>>, T),
    Exp(Box<Node<T>>),
    Sqrt(Box<Node<T>>),
    Abs(Box<Node<T>>),
    Sign(Box<Node<T>>),
}

use Node::*;

fn is_const<T: Real>(n: &Node<T>, v: T) -> bool {
    matches!(n, Const(c) if *c == v)
}

impl<T: Real> Node<T> {
    pub fn constant_value(&self) -> Option<T> {
        match self {
            Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn has_var(&self) -> bool {
        match self {
            Const(_) => false,
            Var(_) => true,
            Neg(a) | PowI(a, _) | PowF(a, _) | Exp(a) | Sqrt(a) | Abs(a) | Sign(a) => a.has_var(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.has_var() || b.has_var(),
        }
    }

    // smart constructors with constant folding

    fn neg(a: Node<T>) -> Node<T> {
        match a {
            Const(c) => Const(-c),
            Neg(x) => *x,
            a => Neg(Box::new(a)),
        }
    }

    fn add(a: Node<T>, b: Node<T>) -> Node<T> {
        match (a, b) {
            (Const(x), Const(y)) => Const(x + y),
            (a, b) if is_const(&a, T::zero()) => b,
            (a, b) if is_const(&b, T::zero()) => a,
            (a, Neg(b)) => Sub(Box::new(a), b),
            (a, b) => Add(Box::new(a), Box::new(b)),
        }
    }

    fn sub(a: Node<T>, b: Node<T>) -> Node<T> {
        match (a, b) {
            (Const(x), Const(y)) => Const(x - y),
            (a, b) if is_const(&b, T::zero()) => a,
            (a, b) if is_const(&a, T::zero()) => Self::neg(b),
            (a, Neg(b)) => Add(Box::new(a), b),
            (a, b) => Sub(Box::new(a), Box::new(b)),
        }
    }

    fn mul(a: Node<T>, b: Node<T>) -> Node<T> {
        match (a, b) {
            (Const(x), Const(y)) => Const(x * y),
            (a, _) if is_const(&a, T::zero()) => Const(T::zero()),
            (_, b) if is_const(&b, T::zero()) => Const(T::zero()),
            (a, b) if is_const(&a, T::one()) => b,
            (a, b) if is_const(&b, T::one()) => a,
            (Neg(a), b) => Self::neg(Self::mul(*a, b)),
            (a, Neg(b)) => Self::neg(Self::mul(a, *b)),
            (a, b) => Mul(Box::new(a), Box::new(b)),
        }
    }

    fn div(a: Node<T>, b: Node<T>) -> Node<T> {
        match (a, b) {
            (Const(x), Const(y)) if y != T::zero() => Const(x / y),
            (a, b) if is_const(&a, T::zero()) && !matches!(b, Const(c) if c == T::zero()) => Const(T::zero()),
            (a, b) if is_const(&b, T::one()) => a,
            (a, b) => Div(Box::new(a), Box::new(b)),
        }
    }

    fn powi(a: Node<T>, k: i32) -> Node<T> {
        match (a, k) {
            (_, 0) => Const(T::one()),
            (a, 1) => a,
            (Const(c), k) if c != T::zero() || k > 0 => Const(c.powi(k)),
            (a, k) => PowI(Box::new(a), k),
        }
    }

    fn powf(a: Node<T>, p: T) -> Node<T> {
        if p == T::zero() {
            return Const(T::one());
        }
        if p == T::one() {
            return a;
        }
        match a {
            Const(c) if c > T::zero() => Const(c.powf(p)),
            a => PowF(Box::new(a), p),
        }
    }

    fn exp(a: Node<T>) -> Node<T> {
        match a {
            Const(c) => Const(c.exp()),
            a => Exp(Box::new(a)),
        }
    }

    /// Symbolic derivative with respect to variable `wrt`.
    pub fn derivative(&self, wrt: usize) -> Node<T> {
        match self {
            Const(_) => Const(T::zero()),
            Var(i) => Const(if *i == wrt { T::one() } else { T::zero() }),
            Neg(a) => Self::neg(a.derivative(wrt)),
            Add(a, b) => Self::add(a.derivative(wrt), b.derivative(wrt)),
            Sub(a, b) => Self::sub(a.derivative(wrt), b.derivative(wrt)),
            Mul(a, b) => Self::add(
                Self::mul(a.derivative(wrt), (**b).clone()),
                Self::mul((**a).clone(), b.derivative(wrt)),
            ),
            Div(a, b) => {
                let da = a.derivative(wrt);
                let db = b.derivative(wrt);
                let first = Self::div(da, (**b).clone());
                if is_const(&db, T::zero()) {
                    first
                } else {
                    Self::sub(first, Self::div(Self::mul((**a).clone(), db), Self::powi((**b).clone(), 2)))
                }
            }
            PowI(a, k) => Self::mul(
                Self::mul(Const(T::from_i32(*k).unwrap()), Self::powi((**a).clone(), k - 1)),
                a.derivative(wrt),
            ),
            PowF(a, p) => Self::mul(Self::mul(Const(*p), Self::powf((**a).clone(), *p - T::one())), a.derivative(wrt)),
            Exp(a) => Self::mul(self.clone(), a.derivative(wrt)),
            Sqrt(a) => Self::div(a.derivative(wrt), Self::mul(Const(T::lit(2.0)), self.clone())),
            Abs(a) => Self::mul(Sign(a.clone()), a.derivative(wrt)),
            Sign(_) => Const(T::zero()),
        }
    }

    /// Evaluate without error checks; non-finite results propagate.
    pub fn eval_raw(&self, vars: &[T]) -> T {
        match self {
            Const(c) => *c,
            Var(i) => vars[*i],
            Neg(a) => -a.eval_raw(vars),
            Add(a, b) => a.eval_raw(vars) + b.eval_raw(vars),
            Sub(a, b) => a.eval_raw(vars) - b.eval_raw(vars),
            Mul(a, b) => a.eval_raw(vars) * b.eval_raw(vars),
            Div(a, b) => a.eval_raw(vars) / b.eval_raw(vars),
            PowI(a, k) => a.eval_raw(vars).powi(*k),
            PowF(a, p) => a.eval_raw(vars).powf(*p),
            Exp(a) => a.eval_raw(vars).exp(),
            Sqrt(a) => a.eval_raw(vars).sqrt(),
            Abs(a) => a.eval_raw(vars).abs(),
            Sign(a) => {
                let x = a.eval_raw(vars);
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Evaluate, reporting division by zero and non-finite results.
    pub fn eval(&self, vars: &[T]) -> Result<T> {
        let at = || vars.first().map(|v| v.f64()).unwrap_or(0.0);
        let v = self.eval_checked(vars).ok_or_else(|| Error::DivisionByZero { t: at() })?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Overflow { t: at() })
        }
    }

    fn eval_checked(&self, vars: &[T]) -> Option<T> {
        Some(match self {
            Div(a, b) => {
                let d = b.eval_checked(vars)?;
                if d == T::zero() {
                    return None;
                }
                a.eval_checked(vars)? / d
            }
            PowI(a, k) if *k < 0 => {
                let x = a.eval_checked(vars)?;
                if x == T::zero() {
                    return None;
                }
                x.powi(*k)
            }
            Neg(a) => -a.eval_checked(vars)?,
            Add(a, b) => a.eval_checked(vars)? + b.eval_checked(vars)?,
            Sub(a, b) => a.eval_checked(vars)? - b.eval_checked(vars)?,
            Mul(a, b) => a.eval_checked(vars)? * b.eval_checked(vars)?,
            PowI(a, k) => a.eval_checked(vars)?.powi(*k),
            PowF(a, p) => a.eval_checked(vars)?.powf(*p),
            Exp(a) => a.eval_checked(vars)?.exp(),
            Sqrt(a) => a.eval_checked(vars)?.sqrt(),
            Abs(a) => a.eval_checked(vars)?.abs(),
            other => other.eval_raw(vars),
        })
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dialect: Dialect,
}

/// Parse `src` in the given dialect.
pub fn parse<T: Real>(src: &str, dialect: Dialect) -> Result<Node<T>> {
    let mut p = Parser { src: src.as_bytes(), pos: 0, dialect };
    let node = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.err(format!("unexpected `{}`", p.src[p.pos] as char)));
    }
    Ok(node)
}

impl<'a> Parser<'a> {
    fn err(&self, message: String) -> Error {
        Error::Syntax { offset: self.pos, message }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected `{}`", c as char)))
        }
    }

    fn expr<T: Real>(&mut self) -> Result<Node<T>> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Node::add(lhs, self.term()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Node::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term<T: Real>(&mut self) -> Result<Node<T>> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Node::mul(lhs, self.unary()?);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = match (&lhs, &rhs) {
                        // keep 1/0 as a node so evaluation reports it
                        (_, Const(c)) if *c == T::zero() => Div(Box::new(lhs), Box::new(rhs)),
                        _ => Node::div(lhs, rhs),
                    };
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary<T: Real>(&mut self) -> Result<Node<T>> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Node::neg(self.unary()?));
        }
        if self.peek() == Some(b'+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power<T: Real>(&mut self) -> Result<Node<T>> {
        let base = self.atom()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        let start = {
            self.skip_ws();
            self.pos
        };
        let exponent: Node<T> = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Node::neg(self.atom()?)
            }
            Some(b'+') => {
                self.pos += 1;
                self.atom()?
            }
            _ => self.atom()?,
        };
        let value = match exponent.constant_value() {
            Some(v) if !exponent.has_var() => v,
            _ => return Err(Error::NonIntegerExponent { offset: start }),
        };
        let is_int = value.fract() == T::zero() && value.abs() <= T::lit(1e6);
        match self.dialect {
            Dialect::Coefficient => {
                if !is_int {
                    return Err(Error::NonIntegerExponent { offset: start });
                }
                Ok(Node::powi(base, value.to_i32().unwrap()))
            }
            Dialect::Phase { .. } => {
                if is_int {
                    Ok(Node::powi(base, value.to_i32().unwrap()))
                } else {
                    Ok(Node::powf(base, value))
                }
            }
        }
    }

    fn atom<T: Real>(&mut self) -> Result<Node<T>> {
        let c = match self.peek() {
            Some(c) => c,
            None => return Err(self.err("unexpected end of input".into())),
        };
        if c == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
                self.pos += 1;
            }
            let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
            return self.identifier(name, start);
        }
        Err(self.err(format!("unexpected `{}`", c as char)))
    }

    fn identifier<T: Real>(&mut self, name: String, start: usize) -> Result<Node<T>> {
        let func = |p: &mut Self| -> Result<Node<T>> {
            p.expect(b'(')?;
            let e = p.expr()?;
            p.expect(b')')?;
            Ok(e)
        };
        match (self.dialect, name.as_str()) {
            (_, "exp") => Ok(Node::exp(func(self)?)),
            (Dialect::Coefficient, "t") => Ok(Var(0)),
            (Dialect::Phase { .. }, "sqrt") => {
                let a = func(self)?;
                Ok(match a {
                    Const(c) if c >= T::zero() => Const(c.sqrt()),
                    a => Sqrt(Box::new(a)),
                })
            }
            (Dialect::Phase { .. }, "abs") => {
                let a = func(self)?;
                Ok(match a {
                    Const(c) => Const(c.abs()),
                    a => Abs(Box::new(a)),
                })
            }
            (Dialect::Phase { n }, v) if v.starts_with("xi") => match v[2..].parse::<usize>() {
                Ok(k) if k >= 1 && k <= n => Ok(Var(k - 1)),
                _ => Err(Error::UnknownIdentifier { name, offset: start }),
            },
            _ => Err(Error::UnknownIdentifier { name, offset: start }),
        }
    }

    fn number<T: Real>(&mut self) -> Result<Node<T>> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        if i < s.len() && s[i] == b'.' {
            i += 1;
            while i < s.len() && s[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).unwrap();
        let v: f64 = text.parse().map_err(|_| Error::Syntax { offset: start, message: format!("bad number `{text}`") })?;
        self.pos = i;
        Ok(Const(T::lit(v)))
    }
}
