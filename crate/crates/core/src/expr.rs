//! A small expression language for symbols, nonlinearities and densities.
//!
//! The grammar is documented in `docs/expression-grammar.md`. Expressions are
//! evaluated in complex arithmetic against an [`Env`] holding `t`, `x`, `xi`, `u`.

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Scalar variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    U,
    /// Component of `x`, zero based.
    X(usize),
    /// Component of `xi`, zero based.
    Xi(usize),
}

/// Vector arguments of `<..>` and `|..|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VecArg {
    X,
    Xi,
    XComp(usize),
    XiComp(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sqrt,
    Abs,
    Cos,
    Sin,
    Log,
    Re,
    Im,
    Conj,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "cos" => Func::Cos,
            "sin" => Func::Sin,
            "log" => Func::Log,
            "re" => Func::Re,
            "im" => Func::Im,
            "conj" => Func::Conj,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Cos => "cos",
            Func::Sin => "sin",
            Func::Log => "log",
            Func::Re => "re",
            Func::Im => "im",
            Func::Conj => "conj",
        }
    }

    fn apply(self, z: Complex64) -> Complex64 {
        match self {
            Func::Exp => z.exp(),
            Func::Sqrt => z.sqrt(),
            Func::Abs => Complex64::new(z.norm(), 0.0),
            Func::Cos => z.cos(),
            Func::Sin => z.sin(),
            Func::Log => z.ln(),
            Func::Re => Complex64::new(z.re, 0.0),
            Func::Im => Complex64::new(z.im, 0.0),
            Func::Conj => z.conj(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(Complex64),
    Var(Var),
    Bracket(VecArg),
    Norm(VecArg),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    PowI(Box<Node>, i32),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// Evaluation context. Missing coordinates read as zero.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub xi: &'a [f64],
    pub u: Complex64,
}

impl<'a> Env<'a> {
    pub fn new(t: f64, x: &'a [f64], xi: &'a [f64]) -> Self {
        Self {
            t,
            x,
            xi,
            u: Complex64::new(0.0, 0.0),
        }
    }

    pub fn with_u(mut self, u: Complex64) -> Self {
        self.u = u;
        self
    }
}

/// Which variables an expression reads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Dependence {
    pub t: bool,
    pub x: bool,
    pub xi: bool,
    pub u: bool,
}

impl Dependence {
    fn union(self, o: Dependence) -> Dependence {
        Dependence {
            t: self.t || o.t,
            x: self.x || o.x,
            xi: self.xi || o.xi,
            u: self.u || o.u,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr> {
        let tokens = lex(source)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if let Some(tok) = p.peek() {
            return Err(Error::Parse {
                column: tok.column,
                message: format!("unexpected {}", tok.kind),
            });
        }
        Ok(Expr {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn eval(&self, env: &Env) -> Complex64 {
        eval(&self.root, env)
    }

    pub fn dependence(&self) -> Dependence {
        dependence(&self.root)
    }

    /// Largest coordinate index read, plus one; `0` if no coordinate is read.
    pub fn max_component(&self) -> usize {
        max_component(&self.root)
    }

    /// Splits a top-level product into an `x`-part and a `xi`-part.
    ///
    /// Factors depending only on `t` (or constants) go to the `x`-part. Returns
    /// `None` when some factor couples `x` and `xi`, or reads `u`.
    pub fn split_separable(&self) -> Option<(Expr, Expr)> {
        let mut factors = Vec::new();
        collect_factors(&self.root, false, &mut factors);
        let one = Node::Num(Complex64::new(1.0, 0.0));
        let mut px = one.clone();
        let mut pxi = one;
        for (f, inverted) in factors {
            let d = dependence(&f);
            if d.u || (d.x && d.xi) {
                return None;
            }
            let target = if d.xi { &mut pxi } else { &mut px };
            let prev = std::mem::replace(target, Node::Num(Complex64::new(0.0, 0.0)));
            *target = if inverted {
                Node::Div(Box::new(prev), Box::new(f))
            } else {
                Node::Mul(Box::new(prev), Box::new(f))
            };
        }
        Some((
            Expr {
                source: format!("x-part of {}", self.source),
                root: px,
            },
            Expr {
                source: format!("xi-part of {}", self.source),
                root: pxi,
            },
        ))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Expr> {
        Expr::parse(s)
    }
}

fn collect_factors(n: &Node, inverted: bool, out: &mut Vec<(Node, bool)>) {
    match n {
        Node::Mul(a, b) => {
            collect_factors(a, inverted, out);
            collect_factors(b, inverted, out);
        }
        Node::Div(a, b) => {
            collect_factors(a, inverted, out);
            collect_factors(b, !inverted, out);
        }
        other => out.push((other.clone(), inverted)),
    }
}

fn component(v: &[f64], i: usize) -> f64 {
    v.get(i).copied().unwrap_or(0.0)
}

fn vec_norm_sqr(env: &Env, a: VecArg) -> f64 {
    match a {
        VecArg::X => env.x.iter().map(|c| c * c).sum(),
        VecArg::Xi => env.xi.iter().map(|c| c * c).sum(),
        VecArg::XComp(i) => component(env.x, i).powi(2),
        VecArg::XiComp(i) => component(env.xi, i).powi(2),
    }
}

fn eval(n: &Node, env: &Env) -> Complex64 {
    let re = |v: f64| Complex64::new(v, 0.0);
    match n {
        Node::Num(c) => *c,
        Node::Var(Var::T) => re(env.t),
        Node::Var(Var::U) => env.u,
        Node::Var(Var::X(i)) => re(component(env.x, *i)),
        Node::Var(Var::Xi(i)) => re(component(env.xi, *i)),
        Node::Bracket(a) => re((1.0 + vec_norm_sqr(env, *a)).sqrt()),
        Node::Norm(a) => re(vec_norm_sqr(env, *a).sqrt()),
        Node::Neg(a) => -eval(a, env),
        Node::Add(a, b) => eval(a, env) + eval(b, env),
        Node::Sub(a, b) => eval(a, env) - eval(b, env),
        Node::Mul(a, b) => eval(a, env) * eval(b, env),
        Node::Div(a, b) => eval(a, env) / eval(b, env),
        Node::PowI(a, k) => pow_int(a, *k, env),
        Node::Pow(a, b) => {
            let base = eval(a, env);
            let e = eval(b, env);
            if base.im == 0.0 && e.im == 0.0 && base.re >= 0.0 {
                re(base.re.powf(e.re))
            } else if base.norm() == 0.0 {
                re(0.0)
            } else {
                base.powc(e)
            }
        }
        Node::Call(f, a) => f.apply(eval(a, env)),
    }
}

fn pow_int(a: &Node, k: i32, env: &Env) -> Complex64 {
    // <v>^2 is a polynomial; evaluate it without the square root
    if let Node::Bracket(v) = a {
        let s = 1.0 + vec_norm_sqr(env, *v);
        if k % 2 == 0 {
            return Complex64::new(s.powi(k / 2), 0.0);
        }
    }
    let b = eval(a, env);
    if b.im == 0.0 {
        Complex64::new(b.re.powi(k), 0.0)
    } else {
        b.powi(k)
    }
}

fn dependence(n: &Node) -> Dependence {
    let mut d = Dependence::default();
    match n {
        Node::Num(_) => {}
        Node::Var(Var::T) => d.t = true,
        Node::Var(Var::U) => d.u = true,
        Node::Var(Var::X(_)) => d.x = true,
        Node::Var(Var::Xi(_)) => d.xi = true,
        Node::Bracket(a) | Node::Norm(a) => match a {
            VecArg::X | VecArg::XComp(_) => d.x = true,
            VecArg::Xi | VecArg::XiComp(_) => d.xi = true,
        },
        Node::Neg(a) | Node::PowI(a, _) | Node::Call(_, a) => d = dependence(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            d = dependence(a).union(dependence(b))
        }
    }
    d
}

fn max_component(n: &Node) -> usize {
    match n {
        Node::Var(Var::X(i)) | Node::Var(Var::Xi(i)) => i + 1,
        Node::Bracket(VecArg::XComp(i))
        | Node::Norm(VecArg::XComp(i))
        | Node::Bracket(VecArg::XiComp(i))
        | Node::Norm(VecArg::XiComp(i)) => i + 1,
        Node::Neg(a) | Node::PowI(a, _) | Node::Call(_, a) => max_component(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            max_component(a).max(max_component(b))
        }
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Sym(char),
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(v) => write!(f, "number {v}"),
            TokKind::Ident(s) => write!(f, "identifier '{s}'"),
            TokKind::Sym(c) => write!(f, "'{c}'"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
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
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| Error::Parse {
                column,
                message: format!("malformed number '{text}'"),
            })?;
            out.push(Token {
                kind: TokKind::Num(v),
                column,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(chars[start..i].iter().collect()),
                column,
            });
        } else if "+-*/^()<>|,".contains(c) {
            out.push(Token {
                kind: TokKind::Sym(c),
                column,
            });
            i += 1;
        } else {
            return Err(Error::Parse {
                column,
                message: format!("unexpected character '{c}'"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn end_column(&self) -> usize {
        self.tokens.last().map(|t| t.column + 1).unwrap_or(1)
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Token { kind: TokKind::Sym(s), .. }) if *s == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<()> {
        if self.eat_sym(c) {
            return Ok(());
        }
        let (column, found) = match self.peek() {
            Some(t) => (t.column, t.kind.to_string()),
            None => (self.end_column(), "end of input".to_string()),
        };
        Err(Error::Parse {
            column,
            message: format!("expected '{c}', found {found}"),
        })
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_sym('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_sym('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_sym('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_sym('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat_sym('-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else if self.eat_sym('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if !self.eat_sym('^') {
            return Ok(base);
        }
        let exponent = self.unary()?;
        if let Some(k) = constant_integer(&exponent) {
            return Ok(Node::PowI(Box::new(base), k));
        }
        Ok(Node::Pow(Box::new(base), Box::new(exponent)))
    }

    fn vec_arg(&mut self, close: char) -> Result<Node> {
        let tok = self.peek().cloned();
        let arg = match tok {
            Some(Token {
                kind: TokKind::Ident(name),
                column,
            }) => {
                self.pos += 1;
                match variable(&name) {
                    Some(Var::X(_)) if name == "x" => VecArg::X,
                    Some(Var::Xi(_)) if name == "xi" => VecArg::Xi,
                    Some(Var::X(i)) => VecArg::XComp(i),
                    Some(Var::Xi(i)) => VecArg::XiComp(i),
                    _ => {
                        return Err(Error::Parse {
                            column,
                            message: format!("'{close}' brackets accept x, xi or a component, found '{name}'"),
                        })
                    }
                }
            }
            Some(t) => {
                return Err(Error::Parse {
                    column: t.column,
                    message: format!("expected a variable, found {}", t.kind),
                })
            }
            None => {
                return Err(Error::Parse {
                    column: self.end_column(),
                    message: "expected a variable, found end of input".into(),
                })
            }
        };
        self.expect_sym(close)?;
        Ok(if close == '>' {
            Node::Bracket(arg)
        } else {
            Node::Norm(arg)
        })
    }

    fn atom(&mut self) -> Result<Node> {
        let Some(tok) = self.peek().cloned() else {
            return Err(Error::Parse {
                column: self.end_column(),
                message: "unexpected end of input".into(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokKind::Num(v) => Ok(Node::Num(Complex64::new(v, 0.0))),
            TokKind::Sym('(') => {
                let e = self.expr()?;
                self.expect_sym(')')?;
                Ok(e)
            }
            TokKind::Sym('<') => self.vec_arg('>'),
            TokKind::Sym('|') => self.vec_arg('|'),
            TokKind::Ident(name) => {
                if name == "i" {
                    return Ok(Node::Num(Complex64::new(0.0, 1.0)));
                }
                if name == "pi" {
                    return Ok(Node::Num(Complex64::new(std::f64::consts::PI, 0.0)));
                }
                if let Some(v) = variable(&name) {
                    return Ok(Node::Var(v));
                }
                if let Some(f) = Func::from_name(&name) {
                    self.expect_sym('(')?;
                    let arg = self.expr()?;
                    self.expect_sym(')')?;
                    return Ok(Node::Call(f, Box::new(arg)));
                }
                Err(Error::Parse {
                    column: tok.column,
                    message: format!("unknown identifier '{name}'"),
                })
            }
            other => Err(Error::Parse {
                column: tok.column,
                message: format!("unexpected {other}"),
            }),
        }
    }
}

fn variable(name: &str) -> Option<Var> {
    Some(match name {
        "t" => Var::T,
        "u" => Var::U,
        "x" | "x1" => Var::X(0),
        "x2" => Var::X(1),
        "x3" => Var::X(2),
        "xi" | "xi1" => Var::Xi(0),
        "xi2" => Var::Xi(1),
        "xi3" => Var::Xi(2),
        _ => return None,
    })
}

fn constant_integer(n: &Node) -> Option<i32> {
    let v = match n {
        Node::Num(c) if c.im == 0.0 => c.re,
        Node::Neg(a) => -(constant_integer(a)? as f64),
        _ => return None,
    };
    (v.fract() == 0.0 && v.abs() <= i32::MAX as f64).then_some(v as i32)
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
