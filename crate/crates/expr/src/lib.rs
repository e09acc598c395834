//! Expression trees for the closed-form data of heat-like problems:
//! coefficients, sources, initial conditions and reference solutions.
//!
//! The surface syntax is ordinary infix notation over the variables
//! `t`, `x`, `y` and free parameter identifiers, with `^` restricted to
//! constant exponents. See `docs/expression-grammar.md` at the workspace
//! root for the grammar.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// The three space-time variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X,
    Y,
}

impl Var {
    pub fn as_str(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::X => "x",
            Var::Y => "y",
        }
    }

    fn from_name(name: &str) -> Option<Var> {
        match name {
            "t" => Some(Var::T),
            "x" => Some(Var::X),
            "y" => Some(Var::Y),
            _ => None,
        }
    }
}

/// Built-in unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Cosh,
    Sinh,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Cosh => "cosh",
            Func::Sinh => "sinh",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "exp" => Some(Func::Exp),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "cosh" => Some(Func::Cosh),
            "sinh" => Some(Func::Sinh),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Exp => v.exp(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Cosh => v.cosh(),
            Func::Sinh => v.sinh(),
            Func::Sqrt => v.sqrt(),
        }
    }
}

/// An expression tree. Binary nodes own their children; exponents are
/// restricted to constants so differentiation stays closed over this type.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Param(String),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Base raised to a constant exponent.
    Pow(Box<Expr>, f64),
}

/// Bindings from variable and parameter names to real values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Environment {
    bindings: BTreeMap<String, f64>,
}

impl Environment {
    pub fn new() -> Self {
        Environment::default()
    }

    /// Builder-style insert, convenient for literal environments.
    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.bindings.insert(name.to_string(), value);
        self
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.bindings.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.bindings.get(name).copied()
    }
}

/// Error produced while parsing source text. Offsets are byte positions
/// into the input.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: found {found}, expected one of {}", expected.join(", "))]
    UnexpectedToken {
        offset: usize,
        found: String,
        expected: Vec<&'static str>,
    },
    #[error("unknown function '{name}' at offset {offset}")]
    UnknownFunction { offset: usize, name: String },
    #[error("malformed number '{text}' at offset {offset}")]
    InvalidNumber { offset: usize, text: String },
    #[error("exponent at offset {offset} does not reduce to a constant")]
    NonConstantExponent { offset: usize },
    #[error("unexpected character '{ch}' at offset {offset}")]
    UnexpectedChar { offset: usize, ch: char },
}

/// Error produced while evaluating an expression against an environment.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("symbol '{symbol}' is not bound in the environment")]
    UnboundSymbol { symbol: String },
    #[error("division by zero in {denominator}")]
    DivisionByZero { denominator: String },
    #[error("subexpression {subexpression} evaluated to a non-finite value")]
    NonFinite { subexpression: String },
}

impl Expr {
    /// Evaluate against `env`.
    ///
    /// # Errors
    ///
    /// Fails on unbound symbols, zero denominators and any subexpression
    /// whose value is not finite (overflow, `sqrt` of a negative number,
    /// fractional powers of negative bases). The error names the offending
    /// subexpression in printed form.
    pub fn evaluate(&self, env: &Environment) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => env.get(v.as_str()).ok_or_else(|| EvalError::UnboundSymbol {
                symbol: v.as_str().to_string(),
            })?,
            Expr::Param(name) => env.get(name).ok_or_else(|| EvalError::UnboundSymbol {
                symbol: name.clone(),
            })?,
            Expr::Neg(e) => -e.evaluate(env)?,
            Expr::Call(f, e) => f.apply(e.evaluate(env)?),
            Expr::Add(a, b) => a.evaluate(env)? + b.evaluate(env)?,
            Expr::Sub(a, b) => a.evaluate(env)? - b.evaluate(env)?,
            Expr::Mul(a, b) => a.evaluate(env)? * b.evaluate(env)?,
            Expr::Div(a, b) => {
                let denom = b.evaluate(env)?;
                if denom == 0.0 {
                    return Err(EvalError::DivisionByZero {
                        denominator: b.to_string(),
                    });
                }
                a.evaluate(env)? / denom
            }
            Expr::Pow(base, p) => {
                let b = base.evaluate(env)?;
                pow_const(b, *p)
            }
        };
        if !v.is_finite() {
            return Err(EvalError::NonFinite {
                subexpression: self.to_string(),
            });
        }
        Ok(v)
    }

    /// Total derivative with respect to `symbol` (a variable or parameter
    /// name); every other symbol is held constant.
    pub fn differentiate(&self, symbol: &str) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(v) => Expr::Const(if v.as_str() == symbol { 1.0 } else { 0.0 }),
            Expr::Param(name) => Expr::Const(if name == symbol { 1.0 } else { 0.0 }),
            Expr::Neg(e) => Expr::Neg(Box::new(e.differentiate(symbol))),
            Expr::Call(f, e) => {
                let inner = e.differentiate(symbol);
                let outer = match f {
                    Func::Exp => Expr::Call(Func::Exp, e.clone()),
                    Func::Sin => Expr::Call(Func::Cos, e.clone()),
                    Func::Cos => Expr::Neg(Box::new(Expr::Call(Func::Sin, e.clone()))),
                    Func::Cosh => Expr::Call(Func::Sinh, e.clone()),
                    Func::Sinh => Expr::Call(Func::Cosh, e.clone()),
                    Func::Sqrt => {
                        // d sqrt(u) = u' / (2 sqrt(u))
                        return Expr::Div(
                            Box::new(inner),
                            Box::new(Expr::Mul(
                                Box::new(Expr::Const(2.0)),
                                Box::new(Expr::Call(Func::Sqrt, e.clone())),
                            )),
                        );
                    }
                };
                Expr::Mul(Box::new(outer), Box::new(inner))
            }
            Expr::Add(a, b) => Expr::Add(
                Box::new(a.differentiate(symbol)),
                Box::new(b.differentiate(symbol)),
            ),
            Expr::Sub(a, b) => Expr::Sub(
                Box::new(a.differentiate(symbol)),
                Box::new(b.differentiate(symbol)),
            ),
            Expr::Mul(a, b) => Expr::Add(
                Box::new(Expr::Mul(Box::new(a.differentiate(symbol)), b.clone())),
                Box::new(Expr::Mul(a.clone(), Box::new(b.differentiate(symbol)))),
            ),
            Expr::Div(a, b) => Expr::Div(
                Box::new(Expr::Sub(
                    Box::new(Expr::Mul(Box::new(a.differentiate(symbol)), b.clone())),
                    Box::new(Expr::Mul(a.clone(), Box::new(b.differentiate(symbol)))),
                )),
                Box::new(Expr::Pow(b.clone(), 2.0)),
            ),
            Expr::Pow(base, p) => {
                // d u^p = p u^(p-1) u'
                let factor = Expr::Mul(
                    Box::new(Expr::Const(*p)),
                    Box::new(Expr::Pow(base.clone(), p - 1.0)),
                );
                Expr::Mul(Box::new(factor), Box::new(base.differentiate(symbol)))
            }
        }
    }

    /// Apply semantics-preserving local rewrites bottom-up: constant
    /// folding, identity and zero elimination, double-negation removal and
    /// cancellation of structurally equal subtraction operands.
    ///
    /// The result is a fixpoint: simplifying twice returns the same tree.
    pub fn simplify(&self) -> Expr {
        let node = match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Param(_) => self.clone(),
            Expr::Neg(e) => Expr::Neg(Box::new(e.simplify())),
            Expr::Call(f, e) => Expr::Call(*f, Box::new(e.simplify())),
            Expr::Add(a, b) => Expr::Add(Box::new(a.simplify()), Box::new(b.simplify())),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.simplify()), Box::new(b.simplify())),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.simplify()), Box::new(b.simplify())),
            Expr::Div(a, b) => Expr::Div(Box::new(a.simplify()), Box::new(b.simplify())),
            Expr::Pow(base, p) => Expr::Pow(Box::new(base.simplify()), *p),
        };
        reduce(node)
    }

    /// Names of all variables and parameters appearing in the tree.
    pub fn free_symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(v.as_str().to_string());
            }
            Expr::Param(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(e) | Expr::Call(_, e) | Expr::Pow(e, _) => e.collect_symbols(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_symbols(out);
                b.collect_symbols(out);
            }
        }
    }

    /// Replace every occurrence of `symbol` (variable or parameter) by a
    /// copy of `replacement`.
    pub fn substitute(&self, symbol: &str, replacement: &Expr) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(v) => {
                if v.as_str() == symbol {
                    replacement.clone()
                } else {
                    self.clone()
                }
            }
            Expr::Param(name) => {
                if name == symbol {
                    replacement.clone()
                } else {
                    self.clone()
                }
            }
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute(symbol, replacement))),
            Expr::Call(f, e) => Expr::Call(*f, Box::new(e.substitute(symbol, replacement))),
            Expr::Add(a, b) => Expr::Add(
                Box::new(a.substitute(symbol, replacement)),
                Box::new(b.substitute(symbol, replacement)),
            ),
            Expr::Sub(a, b) => Expr::Sub(
                Box::new(a.substitute(symbol, replacement)),
                Box::new(b.substitute(symbol, replacement)),
            ),
            Expr::Mul(a, b) => Expr::Mul(
                Box::new(a.substitute(symbol, replacement)),
                Box::new(b.substitute(symbol, replacement)),
            ),
            Expr::Div(a, b) => Expr::Div(
                Box::new(a.substitute(symbol, replacement)),
                Box::new(b.substitute(symbol, replacement)),
            ),
            Expr::Pow(base, p) => Expr::Pow(Box::new(base.substitute(symbol, replacement)), *p),
        }
    }
}

fn pow_const(base: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
        base.powi(p as i32)
    } else {
        base.powf(p)
    }
}

/// Local reduction of a single node whose children are already reduced.
/// Rules that build a fresh composite node re-reduce it, so the output
/// contains no redex this function knows about.
fn reduce(e: Expr) -> Expr {
    match e {
        Expr::Neg(inner) => match *inner {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(x) => *x,
            other => Expr::Neg(Box::new(other)),
        },
        Expr::Call(f, inner) => match *inner {
            Expr::Const(c) => {
                let v = f.apply(c);
                if v.is_finite() {
                    Expr::Const(v)
                } else {
                    Expr::Call(f, Box::new(Expr::Const(c)))
                }
            }
            other => Expr::Call(f, Box::new(other)),
        },
        Expr::Add(a, b) => match (*a, *b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
            (Expr::Const(z), rhs) if z == 0.0 => rhs,
            (lhs, Expr::Const(z)) if z == 0.0 => lhs,
            (lhs, rhs) => Expr::Add(Box::new(lhs), Box::new(rhs)),
        },
        Expr::Sub(a, b) => match (*a, *b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
            (lhs, Expr::Const(z)) if z == 0.0 => lhs,
            (Expr::Const(z), rhs) if z == 0.0 => reduce(Expr::Neg(Box::new(rhs))),
            (lhs, rhs) if lhs == rhs => Expr::Const(0.0),
            (lhs, rhs) => Expr::Sub(Box::new(lhs), Box::new(rhs)),
        },
        Expr::Mul(a, b) => match (*a, *b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
            (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
            (Expr::Const(o), rhs) if o == 1.0 => rhs,
            (lhs, Expr::Const(o)) if o == 1.0 => lhs,
            (Expr::Const(m), rhs) if m == -1.0 => reduce(Expr::Neg(Box::new(rhs))),
            (lhs, Expr::Const(m)) if m == -1.0 => reduce(Expr::Neg(Box::new(lhs))),
            (lhs, rhs) => Expr::Mul(Box::new(lhs), Box::new(rhs)),
        },
        Expr::Div(a, b) => match (*a, *b) {
            (Expr::Const(x), Expr::Const(y)) if y != 0.0 => Expr::Const(x / y),
            (Expr::Const(z), rhs) if z == 0.0 => {
                // 0 / e rewrites to 0; e is kept out of the result, so a
                // singular environment no longer raises an error here.
                let _ = rhs;
                Expr::Const(0.0)
            }
            (lhs, Expr::Const(o)) if o == 1.0 => lhs,
            (lhs, rhs) => Expr::Div(Box::new(lhs), Box::new(rhs)),
        },
        Expr::Pow(base, p) => {
            if p == 0.0 {
                Expr::Const(1.0)
            } else if p == 1.0 {
                *base
            } else if let Expr::Const(c) = *base {
                let v = pow_const(c, p);
                if v.is_finite() {
                    Expr::Const(v)
                } else {
                    Expr::Pow(Box::new(Expr::Const(c)), p)
                }
            } else {
                Expr::Pow(base, p)
            }
        }
        other => other,
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized canonical form; `parse` accepts the output.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // A bare negative literal would rebind under `^` on reparse
            // (unary minus is looser than power), so wrap it.
            Expr::Const(c) if c.is_sign_negative() => write!(f, "(-{})", -c),
            Expr::Const(c) => write!(f, "{}", c),
            Expr::Var(v) => write!(f, "{}", v.as_str()),
            Expr::Param(name) => write!(f, "{}", name),
            Expr::Neg(e) => write!(f, "(-{})", e),
            Expr::Call(func, e) => write!(f, "{}({})", func.name(), e),
            Expr::Add(a, b) => write!(f, "({} + {})", a, b),
            Expr::Sub(a, b) => write!(f, "({} - {})", a, b),
            Expr::Mul(a, b) => write!(f, "({} * {})", a, b),
            Expr::Div(a, b) => write!(f, "({} / {})", a, b),
            Expr::Pow(base, p) => write!(f, "({} ^ {})", base, p),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number '{}'", v),
            Tok::Ident(s) => format!("identifier '{}'", s),
            Tok::Plus => "'+'".to_string(),
            Tok::Minus => "'-'".to_string(),
            Tok::Star => "'*'".to_string(),
            Tok::Slash => "'/'".to_string(),
            Tok::Caret => "'^'".to_string(),
            Tok::LParen => "'('".to_string(),
            Tok::RParen => "')'".to_string(),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push((i, Tok::Plus));
                i += 1;
            }
            '-' => {
                out.push((i, Tok::Minus));
                i += 1;
            }
            '*' => {
                out.push((i, Tok::Star));
                i += 1;
            }
            '/' => {
                out.push((i, Tok::Slash));
                i += 1;
            }
            '^' => {
                out.push((i, Tok::Caret));
                i += 1;
            }
            '(' => {
                out.push((i, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((i, Tok::RParen));
                i += 1;
            }
            _ if c.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value = text.parse::<f64>().map_err(|_| ParseError::InvalidNumber {
                    offset: start,
                    text: text.to_string(),
                })?;
                out.push((start, Tok::Num(value)));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
            }
            _ => return Err(ParseError::UnexpectedChar { offset: i, ch: c }),
        }
    }
    out.push((src.len(), Tok::Eof));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

const ATOM_EXPECTED: &[&str] = &["number", "identifier", "'('", "'-'"];

impl Parser {
    fn peek(&self) -> &(usize, Tok) {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> (usize, Tok) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &[&'static str]) -> ParseError {
        let (offset, tok) = self.peek();
        ParseError::UnexpectedToken {
            offset: *offset,
            found: tok.describe(),
            expected: expected.to_vec(),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().1 {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().1 {
                Tok::Star => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek().1, Tok::Minus) {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if matches!(self.peek().1, Tok::Caret) {
            self.bump();
            let exp_offset = self.peek().0;
            // The exponent parses at unary precedence (so `x^-2` and
            // `x^2^3` behave conventionally) but must fold to a constant.
            let exp_tree = self.unary()?;
            let folded = exp_tree.simplify();
            if let Expr::Const(p) = folded {
                return Ok(Expr::Pow(Box::new(base), p));
            }
            return Err(ParseError::NonConstantExponent { offset: exp_offset });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().1.clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::Ident(name) => {
                let (offset, _) = self.bump();
                if let Some(func) = Func::from_name(&name) {
                    if !matches!(self.peek().1, Tok::LParen) {
                        return Err(self.unexpected(&["'('"]));
                    }
                    self.bump();
                    let arg = self.expr()?;
                    if !matches!(self.peek().1, Tok::RParen) {
                        return Err(self.unexpected(&["')'", "'+'", "'-'", "'*'", "'/'", "'^'"]));
                    }
                    self.bump();
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if matches!(self.peek().1, Tok::LParen) {
                    // No implicit multiplication: an identifier applied to
                    // parentheses can only be a (here unrecognized) function.
                    return Err(ParseError::UnknownFunction { offset, name });
                }
                match Var::from_name(&name) {
                    Some(v) => Ok(Expr::Var(v)),
                    None => Ok(Expr::Param(name)),
                }
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                if !matches!(self.peek().1, Tok::RParen) {
                    return Err(self.unexpected(&["')'", "'+'", "'-'", "'*'", "'/'", "'^'"]));
                }
                self.bump();
                Ok(inner)
            }
            _ => Err(self.unexpected(ATOM_EXPECTED)),
        }
    }
}

/// Parse source text into an expression tree.
///
/// # Errors
///
/// Syntax errors report the byte offset of the offending token together
/// with the set of tokens that would have been accepted there.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if !matches!(p.peek().1, Tok::Eof) {
        return Err(p.unexpected(&["'+'", "'-'", "'*'", "'/'", "'^'", "end of input"]));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env1() -> Environment {
        Environment::new()
            .with("t", 0.5)
            .with("x", 2.0)
            .with("c", -1.0)
            .with("g", 1.0)
            .with("k", 1.0)
    }

    #[test]
    fn parses_model_source_and_lists_symbols() {
        let e = parse("c*x^2*exp(-g*t)+k*t").unwrap();
        let syms: Vec<String> = e.free_symbols().into_iter().collect();
        assert_eq!(syms, vec!["c", "g", "k", "t", "x"]);
    }

    #[test]
    fn precedence_binds_power_over_product() {
        let e = parse("(g/2)*x^2").unwrap();
        let v = e
            .evaluate(&Environment::new().with("g", 3.0).with("x", 2.0))
            .unwrap();
        assert_eq!(v, 6.0);
        // Without the parentheses the division still happens before the
        // product of the power.
        let e2 = parse("g/2*x^2").unwrap();
        let v2 = e2
            .evaluate(&Environment::new().with("g", 3.0).with("x", 2.0))
            .unwrap();
        assert_eq!(v2, 6.0);
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        let e = parse("-x^2").unwrap();
        let v = e.evaluate(&Environment::new().with("x", 3.0)).unwrap();
        assert_eq!(v, -9.0);
    }

    #[test]
    fn dangling_paren_reports_offset_and_expected_set() {
        let err = parse("k*(").unwrap_err();
        match err {
            ParseError::UnexpectedToken {
                offset,
                found,
                expected,
            } => {
                assert_eq!(offset, 3);
                assert_eq!(found, "end of input");
                assert!(expected.contains(&"number"));
                assert!(expected.contains(&"identifier"));
            }
            other => panic!("wrong error kind: {other:?}"),
        }
    }

    #[test]
    fn non_constant_exponent_is_rejected() {
        let err = parse("x^t").unwrap_err();
        assert!(matches!(err, ParseError::NonConstantExponent { offset: 2 }));
        // A parenthesized constant expression folds and is accepted.
        let e = parse("x^(1/2)").unwrap();
        assert_eq!(e, Expr::Pow(Box::new(Expr::Var(Var::X)), 0.5));
    }

    #[test]
    fn evaluates_sample_point() {
        let e = parse("c*x^2*exp(-g*t)+k*t").unwrap();
        let v = e.evaluate(&env1()).unwrap();
        let expected = -1.0 * 4.0 * (-0.5f64).exp() + 0.5;
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn division_by_zero_names_denominator() {
        let e = parse("x/(t-t)").unwrap();
        let err = e.evaluate(&env1()).unwrap_err();
        match err {
            EvalError::DivisionByZero { denominator } => {
                assert_eq!(denominator, "(t - t)");
            }
            other => panic!("wrong error kind: {other:?}"),
        }
    }

    #[test]
    fn unbound_symbol_is_named() {
        let e = parse("a+b").unwrap();
        let err = e.evaluate(&Environment::new().with("a", 1.0)).unwrap_err();
        assert_eq!(
            err,
            EvalError::UnboundSymbol {
                symbol: "b".to_string()
            }
        );
    }

    #[test]
    fn sqrt_of_negative_is_reported() {
        let e = parse("sqrt(c)").unwrap();
        let err = e.evaluate(&Environment::new().with("c", -4.0)).unwrap_err();
        assert!(matches!(err, EvalError::NonFinite { .. }));
    }

    #[test]
    fn derivative_in_parameter_matches_closed_form() {
        // d/dg of c*x^2*exp(-g*t) + k*t is -t*c*x^2*exp(-g*t).
        let e = parse("c*x^2*exp(-g*t)+k*t").unwrap();
        let d = e.differentiate("g").simplify();
        for (t, x) in [(0.1, 0.5), (0.7, 1.5), (1.0, 2.0)] {
            let env = Environment::new()
                .with("t", t)
                .with("x", x)
                .with("c", -1.0)
                .with("g", 1.0)
                .with("k", 1.0);
            let got = d.evaluate(&env).unwrap();
            let want = -t * -1.0 * x * x * (-t).exp();
            assert!((got - want).abs() < 1e-14, "t={t} x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn derivative_of_independent_symbol_simplifies_to_zero() {
        let e = parse("c*x^2*exp(-g*t)").unwrap();
        assert_eq!(e.differentiate("k").simplify(), Expr::Const(0.0));
    }

    #[test]
    fn simplify_collapses_identities() {
        let e = parse("0*exp(-g*t) + k*1").unwrap();
        assert_eq!(e.simplify(), Expr::Param("k".to_string()));
        assert_eq!(parse("2*3").unwrap().simplify(), Expr::Const(6.0));
        assert_eq!(parse("x - x").unwrap().simplify(), Expr::Const(0.0));
    }

    #[test]
    fn simplify_is_idempotent_on_samples() {
        for src in [
            "c*x^2*exp(-g*t)+k*t",
            "-(-(x))",
            "(x+0)*(1*y)/1",
            "sqrt(x^2+1)-0",
            "cos(0*t)+sin(0)",
        ] {
            let once = parse(src).unwrap().simplify();
            assert_eq!(once.simplify(), once, "not idempotent on {src}");
        }
    }

    #[test]
    fn printing_round_trips() {
        let e = parse("c*x^2*exp(-g*t)+k*t").unwrap();
        let printed = e.to_string();
        let back = parse(&printed).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn substitute_replaces_parameter_by_tree() {
        let e = parse("k*t").unwrap();
        let repl = parse("0.5 + 0.5*alpha").unwrap();
        let s = e.substitute("k", &repl);
        let v = s
            .evaluate(&Environment::new().with("t", 2.0).with("alpha", 1.0))
            .unwrap();
        assert_eq!(v, 2.0);
    }
}
