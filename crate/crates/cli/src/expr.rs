//! A small expression language over `x` and `theta`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' exponent)?
//! exponent:= '-'? INTEGER ('^' exponent)?
//! primary := NUMBER | 'x' | 'theta' | 'pi'
//!          | ('sin' | 'cos' | 'exp') '(' sum ')' | '(' sum ')'
//! ```
//!
//! Exponents are integer literals and chain to the right, so `x^2^3` is `x^8`.

use std::fmt;

pub const MAX_LEN: usize = 4096;

/// Divisors smaller than this in magnitude make evaluation return NaN.
pub const DIV_GUARD: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Theta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode {
    Var(Var),
    Num(f64),
    Pi,
    Neg(Box<ExprNode>),
    Add(Box<ExprNode>, Box<ExprNode>),
    Sub(Box<ExprNode>, Box<ExprNode>),
    Mul(Box<ExprNode>, Box<ExprNode>),
    Div(Box<ExprNode>, Box<ExprNode>),
    Pow(Box<ExprNode>, i32),
    Call(Func, Box<ExprNode>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("expression is {0} bytes long; the limit is {MAX_LEN}")]
    TooLong(usize),
    #[error("syntax error at offset {offset}: expected {}", quoted(expected))]
    Syntax { offset: usize, expected: Vec<&'static str> },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("invalid number `{text}` at offset {offset}")]
    BadNumber { offset: usize, text: String },
}

fn quoted(tokens: &[&str]) -> String {
    tokens.iter().map(|t| format!("\"{t}\"")).collect::<Vec<_>>().join(" or ")
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::TooLong(_) => MAX_LEN,
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::BadNumber { offset, .. } => *offset,
        }
    }
}

pub fn parse_expression(text: &str) -> Result<ExprNode, ParseError> {
    if text.len() > MAX_LEN {
        return Err(ParseError::TooLong(text.len()));
    }
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    let node = p.sum()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.expected(&["+", "-", "*", "/", "^", "end of input"]));
    }
    Ok(node)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expected(&mut self, what: &[&'static str]) -> ParseError {
        self.skip_ws();
        ParseError::Syntax { offset: self.pos, expected: what.to_vec() }
    }

    fn sum(&mut self) -> Result<ExprNode, ParseError> {
        let mut lhs = self.product()?;
        loop {
            if self.eat(b'+') {
                lhs = ExprNode::Add(Box::new(lhs), Box::new(self.product()?));
            } else if self.eat(b'-') {
                lhs = ExprNode::Sub(Box::new(lhs), Box::new(self.product()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn product(&mut self) -> Result<ExprNode, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = ExprNode::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = ExprNode::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<ExprNode, ParseError> {
        if self.eat(b'-') {
            return Ok(ExprNode::Neg(Box::new(self.unary()?)));
        }
        let base = self.primary()?;
        if self.eat(b'^') {
            return Ok(ExprNode::Pow(Box::new(base), self.exponent()?));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let neg = self.eat(b'-');
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.expected(&["integer exponent"]));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        let bad = || ParseError::BadNumber { offset: start, text: text.to_string() };
        let mut base: i32 = text.parse().map_err(|_| bad())?;
        if self.eat(b'^') {
            let e = self.exponent()?;
            base = u32::try_from(e).ok().and_then(|e| base.checked_pow(e)).ok_or_else(bad)?;
        }
        Ok(if neg { -base } else { base })
    }

    fn primary(&mut self) -> Result<ExprNode, ParseError> {
        const START: &[&str] = &["number", "x", "theta", "pi", "sin", "cos", "exp", "(", "-"];
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.sum()?;
                if !self.eat(b')') {
                    return Err(self.expected(&[")"]));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
                let func = match name {
                    "x" => return Ok(ExprNode::Var(Var::X)),
                    "theta" => return Ok(ExprNode::Var(Var::Theta)),
                    "pi" => return Ok(ExprNode::Pi),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    _ => return Err(ParseError::UnknownIdentifier { offset: start, name: name.to_string() }),
                };
                if !self.eat(b'(') {
                    return Err(self.expected(&["("]));
                }
                let arg = self.sum()?;
                if !self.eat(b')') {
                    return Err(self.expected(&[")"]));
                }
                Ok(ExprNode::Call(func, Box::new(arg)))
            }
            _ => Err(self.expected(START)),
        }
    }

    fn number(&mut self) -> Result<ExprNode, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos > s
        };
        let mut any = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            any |= digits(self);
        }
        if any && matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if !digits(self) {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        match text.parse::<f64>() {
            Ok(v) if any && v.is_finite() => Ok(ExprNode::Num(v)),
            _ => Err(ParseError::BadNumber { offset: start, text: text.to_string() }),
        }
    }
}

impl ExprNode {
    pub fn num(v: f64) -> Self {
        ExprNode::Num(v)
    }

    /// Value at `(x, θ)`. NaN when a divisor is smaller than [`DIV_GUARD`].
    pub fn eval(&self, x: f64, theta: f64) -> f64 {
        match self {
            ExprNode::Var(Var::X) => x,
            ExprNode::Var(Var::Theta) => theta,
            ExprNode::Num(v) => *v,
            ExprNode::Pi => std::f64::consts::PI,
            ExprNode::Neg(a) => -a.eval(x, theta),
            ExprNode::Add(a, b) => a.eval(x, theta) + b.eval(x, theta),
            ExprNode::Sub(a, b) => a.eval(x, theta) - b.eval(x, theta),
            ExprNode::Mul(a, b) => a.eval(x, theta) * b.eval(x, theta),
            ExprNode::Div(a, b) => {
                let d = b.eval(x, theta);
                if d.abs() < DIV_GUARD {
                    f64::NAN
                } else {
                    a.eval(x, theta) / d
                }
            }
            ExprNode::Pow(a, n) => {
                let v = a.eval(x, theta);
                if *n < 0 && v.abs() < DIV_GUARD {
                    f64::NAN
                } else {
                    v.powi(*n)
                }
            }
            ExprNode::Call(f, a) => {
                let v = a.eval(x, theta);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                }
            }
        }
    }

    /// Exact symbolic derivative, with constant folding of trivial factors.
    pub fn differentiate(&self, var: Var) -> ExprNode {
        use ExprNode::*;
        match self {
            Var(v) => Num(if *v == var { 1.0 } else { 0.0 }),
            Num(_) | Pi => Num(0.0),
            Neg(a) => neg(a.differentiate(var)),
            Add(a, b) => add(a.differentiate(var), b.differentiate(var)),
            Sub(a, b) => sub(a.differentiate(var), b.differentiate(var)),
            Mul(a, b) => add(mul(a.differentiate(var), (**b).clone()), mul((**a).clone(), b.differentiate(var))),
            Div(a, b) => {
                let num = sub(mul(a.differentiate(var), (**b).clone()), mul((**a).clone(), b.differentiate(var)));
                div(num, pow((**b).clone(), 2))
            }
            Pow(a, n) => mul(mul(Num(*n as f64), pow((**a).clone(), n - 1)), a.differentiate(var)),
            Call(f, a) => {
                let outer = match f {
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => neg(Call(Func::Sin, a.clone())),
                    Func::Exp => self.clone(),
                };
                mul(outer, a.differentiate(var))
            }
        }
    }

    fn is_num(&self, v: f64) -> bool {
        matches!(self, ExprNode::Num(n) if *n == v)
    }

    /// Whether the tree mentions `var`.
    pub fn depends_on(&self, var: Var) -> bool {
        match self {
            ExprNode::Var(v) => *v == var,
            ExprNode::Num(_) | ExprNode::Pi => false,
            ExprNode::Neg(a) | ExprNode::Pow(a, _) | ExprNode::Call(_, a) => a.depends_on(var),
            ExprNode::Add(a, b) | ExprNode::Sub(a, b) | ExprNode::Mul(a, b) | ExprNode::Div(a, b) => {
                a.depends_on(var) || b.depends_on(var)
            }
        }
    }
}

fn neg(a: ExprNode) -> ExprNode {
    match a {
        ExprNode::Num(v) => ExprNode::Num(-v),
        ExprNode::Neg(inner) => *inner,
        a => ExprNode::Neg(Box::new(a)),
    }
}

fn add(a: ExprNode, b: ExprNode) -> ExprNode {
    match (a, b) {
        (ExprNode::Num(x), ExprNode::Num(y)) => ExprNode::Num(x + y),
        (a, b) if b.is_num(0.0) => a,
        (a, b) if a.is_num(0.0) => b,
        (a, b) => ExprNode::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: ExprNode, b: ExprNode) -> ExprNode {
    match (a, b) {
        (ExprNode::Num(x), ExprNode::Num(y)) => ExprNode::Num(x - y),
        (a, b) if b.is_num(0.0) => a,
        (a, b) if a.is_num(0.0) => neg(b),
        (a, b) => ExprNode::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: ExprNode, b: ExprNode) -> ExprNode {
    match (a, b) {
        (ExprNode::Num(x), ExprNode::Num(y)) => ExprNode::Num(x * y),
        (a, b) if a.is_num(0.0) || b.is_num(0.0) => ExprNode::Num(0.0),
        (a, b) if a.is_num(1.0) => b,
        (a, b) if b.is_num(1.0) => a,
        (a, b) => ExprNode::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: ExprNode, b: ExprNode) -> ExprNode {
    if a.is_num(0.0) {
        return ExprNode::Num(0.0);
    }
    if b.is_num(1.0) {
        return a;
    }
    ExprNode::Div(Box::new(a), Box::new(b))
}

fn pow(a: ExprNode, n: i32) -> ExprNode {
    match n {
        0 => ExprNode::Num(1.0),
        1 => a,
        _ => ExprNode::Pow(Box::new(a), n),
    }
}

/// Prints a form that parses back to the same tree.
///
/// Every compound subexpression is parenthesized, so associativity never
/// has to be reconstructed. Negative literals (which the parser never
/// produces) print as `(-v)` and come back as a negation.
impl fmt::Display for ExprNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprNode::Var(Var::X) => write!(f, "x"),
            ExprNode::Var(Var::Theta) => write!(f, "theta"),
            ExprNode::Num(v) if *v < 0.0 => write!(f, "(-{:?})", -v),
            ExprNode::Num(v) => write!(f, "{v:?}"),
            ExprNode::Pi => write!(f, "pi"),
            ExprNode::Neg(a) => write!(f, "(-{a})"),
            ExprNode::Add(a, b) => write!(f, "({a} + {b})"),
            ExprNode::Sub(a, b) => write!(f, "({a} - {b})"),
            ExprNode::Mul(a, b) => write!(f, "({a} * {b})"),
            ExprNode::Div(a, b) => write!(f, "({a} / {b})"),
            ExprNode::Pow(a, n) => write!(f, "({a}^{n})"),
            ExprNode::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
