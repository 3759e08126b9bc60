//! Arithmetic expressions over configuration variables.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' INT)*        right-associative, folded
//! primary := NUMBER | IDENT | '(' expr ')'
//! ```
//!
//! Exponents are non-negative integer literals. Evaluation is generic over
//! [`Scalar`], so the same tree yields values (`f64`) or exact derivatives
//! (`Dual`).

use std::fmt;

use thiserror::Error;

use crate::scalar::{seed, Dual, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdentifier { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("variable index {index} out of range for a point of length {len}")]
    VariableOutOfRange { index: usize, len: usize },
}

impl Expr {
    pub fn num(x: f64) -> Self {
        Expr::Num(x)
    }

    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Pow(a, _) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        self.max_var().is_none()
    }

    pub fn eval<T: Scalar>(&self, q: &[T]) -> Result<T, EvalError> {
        Ok(match self {
            Expr::Num(x) => T::from_f64(*x),
            Expr::Var(i) => *q.get(*i).ok_or(EvalError::VariableOutOfRange { index: *i, len: q.len() })?,
            Expr::Neg(a) => -a.eval(q)?,
            Expr::Add(a, b) => a.eval(q)? + b.eval(q)?,
            Expr::Sub(a, b) => a.eval(q)? - b.eval(q)?,
            Expr::Mul(a, b) => a.eval(q)? * b.eval(q)?,
            Expr::Div(a, b) => {
                let num = a.eval(q)?;
                let den = b.eval(q)?;
                if den.re() == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                num / den
            }
            Expr::Pow(a, n) => a.eval(q)?.powi(*n),
        })
    }

    /// Partial derivative along coordinate `i` by dual-number propagation.
    pub fn diff<T: Scalar>(&self, q: &[T], i: usize) -> Result<T, EvalError> {
        if i >= q.len() {
            return Err(EvalError::VariableOutOfRange { index: i, len: q.len() });
        }
        Ok(self.eval(&seed(q, i))?.eps)
    }

    /// Value and full gradient.
    pub fn eval_grad<T: Scalar>(&self, q: &[T]) -> Result<(T, Vec<T>), EvalError> {
        let value = self.eval(q)?;
        if self.is_constant() {
            return Ok((value, vec![T::zero(); q.len()]));
        }
        let grad = (0..q.len()).map(|i| self.diff(q, i)).collect::<Result<_, _>>()?;
        Ok((value, grad))
    }

    /// Directional derivative `∇e(q)·dir`.
    pub fn directional<T: Scalar>(&self, q: &[T], dir: &[T]) -> Result<T, EvalError> {
        let pt: Vec<Dual<T>> = q.iter().zip(dir).map(|(&a, &b)| Dual::new(a, b)).collect();
        Ok(self.eval(&pt)?.eps)
    }
}

/// Free function form of [`Expr::eval`].
pub fn eval_expr<T: Scalar>(e: &Expr, q: &[T]) -> Result<T, EvalError> {
    e.eval(q)
}

/// Free function form of [`Expr::diff`].
pub fn diff_expr<T: Scalar>(e: &Expr, q: &[T], i: usize) -> Result<T, EvalError> {
    e.diff(q, i)
}

impl fmt::Display for Expr {
    /// Fully parenthesised; re-parses to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Var(i) => write!(f, "q{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, n) => write!(f, "({a}^{n})"),
        }
    }
}

/// Parse `text` with variables named positionally by `varnames`.
pub fn parse_expr<S: AsRef<str>>(text: &str, varnames: &[S]) -> Result<Expr, ParseError> {
    let table: Vec<(&str, usize)> = varnames.iter().enumerate().map(|(i, s)| (s.as_ref(), i)).collect();
    parse_expr_with(text, &table)
}

/// Parse with an explicit name → index table (allows aliases).
pub fn parse_expr_with(text: &str, names: &[(&str, usize)]) -> Result<Expr, ParseError> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0, names, end: text.len() };
    let e = p.expr()?;
    match p.peek() {
        None => Ok(e),
        Some(t) => Err(syntax(t.offset, format!("unexpected {}", t.kind.describe()))),
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Num(f64, bool),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl Kind {
    fn describe(&self) -> String {
        match self {
            Kind::Num(x, _) => format!("number {x}"),
            Kind::Ident(s) => format!("identifier `{s}`"),
            Kind::Plus => "`+`".into(),
            Kind::Minus => "`-`".into(),
            Kind::Star => "`*`".into(),
            Kind::Slash => "`/`".into(),
            Kind::Caret => "`^`".into(),
            Kind::LParen => "`(`".into(),
            Kind::RParen => "`)`".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    kind: Kind,
    offset: usize,
}

fn syntax(offset: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax { offset, message: message.into() }
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Some(Kind::Plus),
            b'-' => Some(Kind::Minus),
            b'*' => Some(Kind::Star),
            b'/' => Some(Kind::Slash),
            b'^' => Some(Kind::Caret),
            b'(' => Some(Kind::LParen),
            b')' => Some(Kind::RParen),
            _ => None,
        };
        if let Some(kind) = single {
            out.push(Token { kind, offset: start });
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            let mut integral = true;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                integral &= bytes[i] != b'.';
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    integral = false;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lit = &text[start..i];
            let value: f64 = lit.parse().map_err(|_| syntax(start, format!("malformed number `{lit}`")))?;
            if !value.is_finite() {
                return Err(syntax(start, format!("number `{lit}` out of range")));
            }
            out.push(Token { kind: Kind::Num(value, integral), offset: start });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { kind: Kind::Ident(text[start..i].to_string()), offset: start });
            continue;
        }
        let ch = text[start..].chars().next().unwrap_or('?');
        return Err(syntax(start, format!("unexpected character `{ch}`")));
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    names: &'a [(&'a str, usize)],
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn at(&self, kind: &Kind) -> bool {
        self.peek().is_some_and(|t| &t.kind == kind)
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.at(&Kind::Plus) {
                self.pos += 1;
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.at(&Kind::Minus) {
                self.pos += 1;
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.at(&Kind::Star) {
                self.pos += 1;
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.at(&Kind::Slash) {
                self.pos += 1;
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.at(&Kind::Minus) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if !self.at(&Kind::Caret) {
            return Ok(base);
        }
        let mut exps = Vec::new();
        while self.at(&Kind::Caret) {
            self.pos += 1;
            exps.push(self.exponent()?);
        }
        // a^b^c = a^(b^c)
        let mut folded: u32 = 1;
        for (k, &e) in exps.iter().enumerate().rev() {
            folded = if k == exps.len() - 1 {
                e
            } else {
                e.checked_pow(folded).ok_or_else(|| syntax(self.here(), "exponent too large"))?
            };
        }
        Ok(Expr::Pow(Box::new(base), folded))
    }

    fn exponent(&mut self) -> Result<u32, ParseError> {
        let offset = self.here();
        match self.peek().map(|t| t.kind.clone()) {
            Some(Kind::Num(v, true)) if v <= u32::MAX as f64 => {
                self.pos += 1;
                Ok(v as u32)
            }
            Some(k) => Err(syntax(offset, format!("expected a non-negative integer exponent, found {}", k.describe()))),
            None => Err(syntax(offset, "expected an exponent, found end of input")),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let offset = self.here();
        let Some(tok) = self.peek().cloned() else {
            return Err(syntax(offset, "unexpected end of input"));
        };
        match tok.kind {
            Kind::Num(v, _) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Kind::Ident(name) => {
                self.pos += 1;
                self.names
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|&(_, i)| Expr::Var(i))
                    .ok_or(ParseError::UnknownIdentifier { name, offset })
            }
            Kind::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.at(&Kind::RParen) {
                    return Err(syntax(self.here(), "expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            other => Err(syntax(offset, format!("unexpected {}", other.describe()))),
        }
    }
}
