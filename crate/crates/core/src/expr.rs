//! Single-variable real expressions: parsing, evaluation and symbolic
//! differentiation.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! sum     := product (("+" | "-") product)*
//! product := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := atom ("^" unary)?          right-associative
//! atom    := number | "x" | "pi" | "e" | func "(" sum ")" | "(" sum ")"
//! func    := sin | cos | tan | exp | log | sqrt
//! ```
//!
//! `-x^2` is `-(x^2)`, and `2^-1` is accepted because the exponent is a
//! `unary`.

use std::f64::consts;
use std::fmt;

use thiserror::Error;

/// Elementary functions accepted by [`Expr::Call`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

/// Expression tree over the single real variable `x`.
///
/// Values are immutable once built. Constants are always finite; use
/// [`Expr::constant`] or the parser to construct them.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at byte {offset}: expected {expected}, found {found}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainErrorKind {
    LogNonPositive,
    SqrtNegative,
    DivisionByZero,
    ZeroToNegativePower,
    NegativeBaseFractionalPower,
    NonFinite,
}

impl fmt::Display for DomainErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainErrorKind::LogNonPositive => "log of a non-positive value",
            DomainErrorKind::SqrtNegative => "sqrt of a negative value",
            DomainErrorKind::DivisionByZero => "division by zero",
            DomainErrorKind::ZeroToNegativePower => "zero raised to a negative power",
            DomainErrorKind::NegativeBaseFractionalPower => {
                "negative base raised to a non-integer power"
            }
            DomainErrorKind::NonFinite => "non-finite result",
        })
    }
}

/// Evaluation failure at a specific abscissa.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} at x = {x:?} in `{subexpr}`")]
pub struct EvalError {
    pub x: f64,
    pub kind: DomainErrorKind,
    /// Printed form of the offending sub-expression.
    pub subexpr: String,
}

impl Expr {
    /// Panics if `value` is not finite.
    pub fn constant(value: f64) -> Expr {
        assert!(value.is_finite(), "expression constants must be finite");
        Expr::Const(value)
    }

    pub fn var() -> Expr {
        Expr::Var
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Largest depth of the tree, leaves counting as 1.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var => 1,
            Expr::Neg(a) | Expr::Call(_, a) => 1 + a.depth(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        let fail = |kind| EvalError {
            x,
            kind,
            subexpr: self.to_string(),
        };
        let value = match self {
            Expr::Const(c) => *c,
            Expr::Var => x,
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => {
                let num = a.eval(x)?;
                let den = b.eval(x)?;
                if den == 0.0 {
                    return Err(fail(DomainErrorKind::DivisionByZero));
                }
                num / den
            }
            Expr::Pow(a, b) => {
                let base = a.eval(x)?;
                let exponent = b.eval(x)?;
                if base == 0.0 && exponent < 0.0 {
                    return Err(fail(DomainErrorKind::ZeroToNegativePower));
                }
                if base < 0.0 && exponent.fract() != 0.0 {
                    return Err(fail(DomainErrorKind::NegativeBaseFractionalPower));
                }
                match exponent {
                    2.0 => base * base,
                    e if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 => base.powi(e as i32),
                    e => base.powf(e),
                }
            }
            Expr::Call(func, a) => {
                let arg = a.eval(x)?;
                match func {
                    Func::Sin => arg.sin(),
                    Func::Cos => arg.cos(),
                    Func::Tan => arg.tan(),
                    Func::Exp => arg.exp(),
                    Func::Log => {
                        if arg <= 0.0 {
                            return Err(fail(DomainErrorKind::LogNonPositive));
                        }
                        arg.ln()
                    }
                    Func::Sqrt => {
                        if arg < 0.0 {
                            return Err(fail(DomainErrorKind::SqrtNegative));
                        }
                        arg.sqrt()
                    }
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(fail(DomainErrorKind::NonFinite))
        }
    }

    /// Exact symbolic derivative with respect to `x`.
    ///
    /// Only trivial folding is applied (`0*e`, `1*e`, `e+0`, constant
    /// arithmetic); the result is not simplified further.
    pub fn differentiate(&self) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var => Expr::Const(1.0),
            Expr::Neg(a) => neg(a.differentiate()),
            Expr::Add(a, b) => add(a.differentiate(), b.differentiate()),
            Expr::Sub(a, b) => sub(a.differentiate(), b.differentiate()),
            Expr::Mul(a, b) => add(
                mul(a.differentiate(), (**b).clone()),
                mul((**a).clone(), b.differentiate()),
            ),
            Expr::Div(a, b) => {
                // (a'b - ab') / b^2
                let top = sub(
                    mul(a.differentiate(), (**b).clone()),
                    mul((**a).clone(), b.differentiate()),
                );
                div(top, pow((**b).clone(), Expr::Const(2.0)))
            }
            Expr::Pow(a, b) => match b.as_const() {
                Some(n) => mul(
                    mul(Expr::Const(n), pow((**a).clone(), Expr::Const(n - 1.0))),
                    a.differentiate(),
                ),
                None => {
                    // a^b * (b' ln a + b a'/a)
                    let log_term = mul(b.differentiate(), call(Func::Log, (**a).clone()));
                    let ratio_term = div(mul((**b).clone(), a.differentiate()), (**a).clone());
                    mul(self.clone(), add(log_term, ratio_term))
                }
            },
            Expr::Call(func, a) => {
                let inner = a.differentiate();
                let outer = match func {
                    Func::Sin => call(Func::Cos, (**a).clone()),
                    Func::Cos => neg(call(Func::Sin, (**a).clone())),
                    Func::Tan => add(
                        Expr::Const(1.0),
                        pow(call(Func::Tan, (**a).clone()), Expr::Const(2.0)),
                    ),
                    Func::Exp => self.clone(),
                    Func::Log => div(Expr::Const(1.0), (**a).clone()),
                    Func::Sqrt => div(Expr::Const(0.5), self.clone()),
                };
                mul(outer, inner)
            }
        }
    }

    /// Replaces every occurrence of `x` with `replacement`.
    pub fn substitute(&self, replacement: &Expr) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var => replacement.clone(),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(replacement))),
            Expr::Add(a, b) => Expr::Add(
                Box::new(a.substitute(replacement)),
                Box::new(b.substitute(replacement)),
            ),
            Expr::Sub(a, b) => Expr::Sub(
                Box::new(a.substitute(replacement)),
                Box::new(b.substitute(replacement)),
            ),
            Expr::Mul(a, b) => Expr::Mul(
                Box::new(a.substitute(replacement)),
                Box::new(b.substitute(replacement)),
            ),
            Expr::Div(a, b) => Expr::Div(
                Box::new(a.substitute(replacement)),
                Box::new(b.substitute(replacement)),
            ),
            Expr::Pow(a, b) => Expr::Pow(
                Box::new(a.substitute(replacement)),
                Box::new(b.substitute(replacement)),
            ),
            Expr::Call(f, a) => Expr::Call(*f, Box::new(a.substitute(replacement))),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(_) | Expr::Var | Expr::Call(..) => 5,
        }
    }
}

// Folding constructors shared by `differentiate` and the solution builders.

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(p), Expr::Const(q)) => fold(p + q).unwrap_or_else(|| binary(Expr::Add, a, b)),
        _ if b.is_zero() => a,
        _ if a.is_zero() => b,
        _ => binary(Expr::Add, a, b),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(p), Expr::Const(q)) => fold(p - q).unwrap_or_else(|| binary(Expr::Sub, a, b)),
        _ if b.is_zero() => a,
        _ if a.is_zero() => neg(b),
        _ => binary(Expr::Sub, a, b),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(p), Expr::Const(q)) => fold(p * q).unwrap_or_else(|| binary(Expr::Mul, a, b)),
        _ if a.is_zero() || b.is_zero() => Expr::Const(0.0),
        _ if a.is_one() => b,
        _ if b.is_one() => a,
        _ => binary(Expr::Mul, a, b),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(p), Expr::Const(q)) if *q != 0.0 => {
            fold(p / q).unwrap_or_else(|| binary(Expr::Div, a, b))
        }
        _ if b.is_one() => a,
        _ if a.is_zero() && !b.is_zero() => Expr::Const(0.0),
        _ => binary(Expr::Div, a, b),
    }
}

pub fn pow(a: Expr, b: Expr) -> Expr {
    if b.is_one() {
        return a;
    }
    if b.is_zero() {
        return Expr::Const(1.0);
    }
    let e = binary(Expr::Pow, a, b);
    if let Expr::Pow(base, exponent) = &e {
        if let (Expr::Const(_), Expr::Const(_)) = (&**base, &**exponent) {
            if let Ok(v) = e.eval(0.0) {
                return Expr::Const(v);
            }
        }
    }
    e
}

pub fn call(func: Func, a: Expr) -> Expr {
    Expr::Call(func, Box::new(a))
}

fn binary(ctor: fn(Box<Expr>, Box<Expr>) -> Expr, a: Expr, b: Expr) -> Expr {
    ctor(Box::new(a), Box::new(b))
}

fn fold(value: f64) -> Option<Expr> {
    value.is_finite().then_some(Expr::Const(value))
}

impl fmt::Display for Expr {
    /// Prints text that [`parse_expr`] reads back to an equivalent tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prec = self.precedence();
        // Parenthesize `child` when it binds looser than `min`.
        let child = |f: &mut fmt::Formatter<'_>, e: &Expr, min: u8| -> fmt::Result {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var => f.write_str("x"),
            Expr::Neg(a) => {
                f.write_str("-")?;
                child(f, a, 4)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                child(f, a, prec)?;
                f.write_str(if matches!(self, Expr::Add(..)) {
                    " + "
                } else {
                    " - "
                })?;
                child(f, b, prec + 1)
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                child(f, a, prec)?;
                f.write_str(if matches!(self, Expr::Mul(..)) {
                    "*"
                } else {
                    "/"
                })?;
                child(f, b, prec + 1)
            }
            Expr::Pow(a, b) => {
                child(f, a, 5)?;
                f.write_str("^")?;
                child(f, b, 4)
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expr(s)
    }
}

pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let mut parser = Parser { text, pos: 0 };
    let expr = parser.sum()?;
    parser.skip_ws();
    if parser.pos < text.len() {
        return Err(parser.error("operator or end of input"));
    }
    Ok(expr)
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.text[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn error(&mut self, expected: &str) -> ParseError {
        let found = match self.peek() {
            Some(c) => format!("`{c}`"),
            None => "end of input".to_string(),
        };
        ParseError {
            offset: self.pos,
            expected: expected.to_string(),
            found,
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            Ok(match self.unary()? {
                Expr::Const(c) => Expr::Const(-c),
                inner => Expr::Neg(Box::new(inner)),
            })
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat('^') {
            let exponent = self.unary()?;
            Ok(Expr::Pow(Box::new(base), Box::new(exponent)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let inner = self.sum()?;
                if !self.eat(')') {
                    return Err(self.error("`)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.identifier(),
            _ => Err(self.error("number, `x`, constant, function call or `(`")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let bytes = self.text.as_bytes();
        let mut end = start;
        let digits = |end: &mut usize| {
            let from = *end;
            while *end < bytes.len() && bytes[*end].is_ascii_digit() {
                *end += 1;
            }
            *end - from
        };
        let mut count = digits(&mut end);
        if end < bytes.len() && bytes[end] == b'.' {
            end += 1;
            count += digits(&mut end);
        }
        if count == 0 {
            return Err(self.error("digits"));
        }
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut probe = end + 1;
            if probe < bytes.len() && (bytes[probe] == b'+' || bytes[probe] == b'-') {
                probe += 1;
            }
            if digits(&mut probe) > 0 {
                end = probe;
            }
        }
        let literal = &self.text[start..end];
        let value: f64 = literal.parse().map_err(|_| ParseError {
            offset: start,
            expected: "numeric literal".to_string(),
            found: format!("`{literal}`"),
        })?;
        if !value.is_finite() {
            return Err(ParseError {
                offset: start,
                expected: "finite numeric literal".to_string(),
                found: format!("`{literal}`"),
            });
        }
        self.pos = end;
        Ok(Expr::Const(value))
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let rest = &self.text[start..];
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        let name = &rest[..len];
        match name {
            "x" => {
                self.pos += len;
                Ok(Expr::Var)
            }
            "pi" => {
                self.pos += len;
                Ok(Expr::Const(consts::PI))
            }
            "e" => {
                self.pos += len;
                Ok(Expr::Const(consts::E))
            }
            _ => match Func::from_name(name) {
                Some(func) => {
                    self.pos += len;
                    if !self.eat('(') {
                        return Err(self.error(&format!("`(` after `{name}`")));
                    }
                    let arg = self.sum()?;
                    if !self.eat(')') {
                        return Err(self.error("`)`"));
                    }
                    Ok(Expr::Call(func, Box::new(arg)))
                }
                None => Err(ParseError {
                    offset: start,
                    expected: "`x`, `pi`, `e` or one of sin, cos, tan, exp, log, sqrt".to_string(),
                    found: format!("unknown identifier `{name}`"),
                }),
            },
        }
    }
}
