//! Outer functions `F: R^k -> R` of cylinder functions, as small expression
//! trees with forward-mode gradients, plus a parser for the config syntax
//!
//! ```text
//! tanh(v0) * v1 + 0.5 * cutoff(v2, 4) - exp(-v0)^2 / 3
//! ```
//!
//! `vN` refers to the N-th kernel integral, `cutoff(e, k)` is the
//! truncation profile `ς(e/k)` and `bump(e, a, b)` is the C^3 polynomial bump
//! supported on `[a, b]` with peak 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smooth cutoff `ς`: 1 on `(-inf, 1]`, 0 on `[2, inf)`, cubic smoothstep between.
pub fn cutoff_profile(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let s = r - 1.0;
        1.0 - s * s * (3.0 - 2.0 * s)
    }
}

pub fn cutoff_profile_deriv(r: f64) -> f64 {
    if r <= 1.0 || r >= 2.0 {
        0.0
    } else {
        let s = r - 1.0;
        -6.0 * s * (1.0 - s)
    }
}

fn bump_value_deriv(x: f64, a: f64, b: f64) -> (f64, f64) {
    if x <= a || x >= b {
        return (0.0, 0.0);
    }
    let norm = ((b - a) / 2.0).powi(8);
    let p = (x - a) * (b - x);
    (p.powi(4) / norm, 4.0 * p.powi(3) * (a + b - 2.0 * x) / norm)
}

/// `sup |ς'|`.
pub const CUTOFF_SLOPE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Var(usize),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Powi(Box<Expr>, i32),
    Tanh(Box<Expr>),
    Exp(Box<Expr>),
    Sin(Box<Expr>),
    Cutoff(Box<Expr>, f64),
    /// `((x - a)(b - x))^4 / ((b - a)/2)^8` on `(a, b)`, 0 outside; peak value 1.
    Bump(Box<Expr>, f64, f64),
}

impl Expr {
    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    /// Largest variable index plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Var(i) => i + 1,
            Expr::Const(_) => 0,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => a.arity().max(b.arity()),
            Expr::Neg(a)
            | Expr::Powi(a, _)
            | Expr::Tanh(a)
            | Expr::Exp(a)
            | Expr::Sin(a)
            | Expr::Cutoff(a, _)
            | Expr::Bump(a, ..) => a.arity(),
        }
    }

    /// Renumbers variables by `offset`.
    pub fn shifted(&self, offset: usize) -> Self {
        let s = |e: &Expr| Box::new(e.shifted(offset));
        match self {
            Expr::Var(i) => Expr::Var(i + offset),
            Expr::Const(c) => Expr::Const(*c),
            Expr::Add(a, b) => Expr::Add(s(a), s(b)),
            Expr::Sub(a, b) => Expr::Sub(s(a), s(b)),
            Expr::Mul(a, b) => Expr::Mul(s(a), s(b)),
            Expr::Div(a, b) => Expr::Div(s(a), s(b)),
            Expr::Neg(a) => Expr::Neg(s(a)),
            Expr::Powi(a, n) => Expr::Powi(s(a), *n),
            Expr::Tanh(a) => Expr::Tanh(s(a)),
            Expr::Exp(a) => Expr::Exp(s(a)),
            Expr::Sin(a) => Expr::Sin(s(a)),
            Expr::Cutoff(a, k) => Expr::Cutoff(s(a), *k),
            Expr::Bump(x, a, b) => Expr::Bump(s(x), *a, *b),
        }
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            Expr::Var(i) => v[*i],
            Expr::Const(c) => *c,
            Expr::Add(a, b) => a.eval(v) + b.eval(v),
            Expr::Sub(a, b) => a.eval(v) - b.eval(v),
            Expr::Mul(a, b) => a.eval(v) * b.eval(v),
            Expr::Div(a, b) => a.eval(v) / b.eval(v),
            Expr::Neg(a) => -a.eval(v),
            Expr::Powi(a, n) => a.eval(v).powi(*n),
            Expr::Tanh(a) => a.eval(v).tanh(),
            Expr::Exp(a) => a.eval(v).exp(),
            Expr::Sin(a) => a.eval(v).sin(),
            Expr::Cutoff(a, k) => cutoff_profile(a.eval(v) / k),
            Expr::Bump(x, a, b) => bump_value_deriv(x.eval(v), *a, *b).0,
        }
    }

    /// Value and gradient with respect to `v`.
    pub fn eval_grad(&self, v: &[f64]) -> (f64, Vec<f64>) {
        let n = v.len();
        match self {
            Expr::Var(i) => {
                let mut g = vec![0.0; n];
                g[*i] = 1.0;
                (v[*i], g)
            }
            Expr::Const(c) => (*c, vec![0.0; n]),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let (x, gx) = a.eval_grad(v);
                let (y, gy) = b.eval_grad(v);
                let (val, cx, cy) = match self {
                    Expr::Add(..) => (x + y, 1.0, 1.0),
                    Expr::Sub(..) => (x - y, 1.0, -1.0),
                    Expr::Mul(..) => (x * y, y, x),
                    _ => (x / y, 1.0 / y, -x / (y * y)),
                };
                (val, gx.iter().zip(&gy).map(|(p, q)| cx * p + cy * q).collect())
            }
            Expr::Neg(a)
            | Expr::Powi(a, _)
            | Expr::Tanh(a)
            | Expr::Exp(a)
            | Expr::Sin(a)
            | Expr::Cutoff(a, _)
            | Expr::Bump(a, ..) => {
                let (x, gx) = a.eval_grad(v);
                let (val, d) = match self {
                    Expr::Neg(_) => (-x, -1.0),
                    Expr::Powi(_, p) => (x.powi(*p), *p as f64 * x.powi(p - 1)),
                    Expr::Tanh(_) => {
                        let t = x.tanh();
                        (t, 1.0 - t * t)
                    }
                    Expr::Exp(_) => (x.exp(), x.exp()),
                    Expr::Sin(_) => (x.sin(), x.cos()),
                    Expr::Cutoff(_, k) => (cutoff_profile(x / k), cutoff_profile_deriv(x / k) / k),
                    Expr::Bump(_, lo, hi) => bump_value_deriv(x, *lo, *hi),
                    _ => unreachable!(),
                };
                (val, gx.iter().map(|g| d * g).collect())
            }
        }
    }

    pub fn parse(src: &str) -> Result<Self> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Parse(format!("trailing input in {src:?}")));
        }
        Ok(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Tok::Num(s.parse().map_err(|_| Error::Parse(format!("bad number {s:?}")))?));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(Error::Parse(format!("unexpected character {c:?}")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::Parse(format!("expected {c:?} at token {}", self.pos)))
        }
    }

    fn number(&mut self) -> Result<f64> {
        let neg = self.eat('-');
        match self.tokens.get(self.pos) {
            Some(Tok::Num(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(if neg { -n } else { n })
            }
            _ => Err(Error::Parse(format!("expected a number at token {}", self.pos))),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        let base = self.primary()?;
        if self.eat('^') {
            let neg = self.eat('-');
            match self.tokens.get(self.pos) {
                Some(Tok::Num(n)) if n.fract() == 0.0 => {
                    let n = *n as i32;
                    self.pos += 1;
                    return Ok(Expr::Powi(Box::new(base), if neg { -n } else { n }));
                }
                _ => return Err(Error::Parse("exponent must be an integer literal".into())),
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.tokens.get(self.pos).cloned() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Expr::Const(n))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if let Some(idx) = name.strip_prefix('v').and_then(|s| s.parse::<usize>().ok()) {
                    return Ok(Expr::Var(idx));
                }
                self.expect('(')?;
                let arg = self.expr()?;
                let e = match name.as_str() {
                    "tanh" => Expr::Tanh(Box::new(arg)),
                    "exp" => Expr::Exp(Box::new(arg)),
                    "sin" => Expr::Sin(Box::new(arg)),
                    "cutoff" => {
                        self.expect(',')?;
                        let k = match self.tokens.get(self.pos) {
                            Some(Tok::Num(k)) if *k > 0.0 => *k,
                            _ => return Err(Error::Parse("cutoff scale must be a positive number".into())),
                        };
                        self.pos += 1;
                        Expr::Cutoff(Box::new(arg), k)
                    }
                    "bump" => {
                        let mut ends = [0.0; 2];
                        for end in &mut ends {
                            self.expect(',')?;
                            *end = self.number()?;
                        }
                        if !(ends[1] > ends[0]) {
                            return Err(Error::Parse("bump needs a < b".into()));
                        }
                        Expr::Bump(Box::new(arg), ends[0], ends[1])
                    }
                    other => return Err(Error::Parse(format!("unknown function {other:?}"))),
                };
                self.expect(')')?;
                Ok(e)
            }
            other => Err(Error::Parse(format!("unexpected token {other:?}"))),
        }
    }
}
