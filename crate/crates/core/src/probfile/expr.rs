//! Expression DSL: parsing, printing, evaluation, symbolic differentiation.
//!
//! Grammar (left associative, `^` binds tightest and takes a nonnegative
//! integer literal):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' INT)*
//! atom  := NUM | IDENT | IDENT '(' expr ')' | '(' expr ')'
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn prec(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

/// Name treated as the constant pi unless the caller binds it.
pub const PI_NAME: &str = "pi";

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 1.0)
    }

    fn as_num(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    /// Names of all variables appearing in the tree (including `pi`).
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(e) | Expr::Call(_, e) | Expr::Pow(e, _) => e.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Evaluates with a name lookup; `pi` falls back to the constant.
    pub fn eval_with(&self, env: &dyn Fn(&str) -> Option<f64>) -> Result<f64> {
        let v = self.eval_raw(env)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonfiniteResult(format!("`{self}` evaluated to {v}")))
        }
    }

    fn eval_raw(&self, env: &dyn Fn(&str) -> Option<f64>) -> Result<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(name) => match env(name) {
                Some(v) => v,
                None if name == PI_NAME => std::f64::consts::PI,
                None => return Err(Error::UnboundVariable(name.clone())),
            },
            Expr::Neg(e) => -e.eval_raw(env)?,
            Expr::Call(f, e) => f.apply(e.eval_raw(env)?),
            Expr::Bin(op, a, b) => op.apply(a.eval_raw(env)?, b.eval_raw(env)?),
            Expr::Pow(e, k) => e.eval_raw(env)?.powi(*k as i32),
        })
    }

    /// Symbolic derivative with respect to `var`, lightly simplified.
    pub fn diff(&self, var: &str) -> Expr {
        match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(v) => Expr::Num(if v == var { 1.0 } else { 0.0 }),
            Expr::Neg(e) => neg(e.diff(var)),
            Expr::Bin(BinOp::Add, a, b) => add(a.diff(var), b.diff(var)),
            Expr::Bin(BinOp::Sub, a, b) => sub(a.diff(var), b.diff(var)),
            Expr::Bin(BinOp::Mul, a, b) => {
                add(mul(a.diff(var), (**b).clone()), mul((**a).clone(), b.diff(var)))
            }
            Expr::Bin(BinOp::Div, a, b) => div(
                sub(mul(a.diff(var), (**b).clone()), mul((**a).clone(), b.diff(var))),
                pow((**b).clone(), 2),
            ),
            Expr::Pow(e, k) => {
                if *k == 0 {
                    Expr::Num(0.0)
                } else {
                    mul(mul(Expr::Num(*k as f64), pow((**e).clone(), k - 1)), e.diff(var))
                }
            }
            Expr::Call(f, e) => {
                let inner = e.diff(var);
                let outer = match f {
                    Func::Sin => call(Func::Cos, (**e).clone()),
                    Func::Cos => neg(call(Func::Sin, (**e).clone())),
                    Func::Exp => call(Func::Exp, (**e).clone()),
                };
                mul(outer, inner)
            }
        }
    }

    /// Replaces variables for which `map` returns an expression.
    pub fn substitute(&self, map: &dyn Fn(&str) -> Option<Expr>) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(v) => map(v).unwrap_or_else(|| Expr::Var(v.clone())),
            Expr::Neg(e) => neg(e.substitute(map)),
            Expr::Call(f, e) => call(*f, e.substitute(map)),
            Expr::Bin(op, a, b) => binary(*op, a.substitute(map), b.substitute(map)),
            Expr::Pow(e, k) => pow(e.substitute(map), *k),
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.prec(),
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }
}

// Simplifying constructors. Folding only happens when the result is finite.

fn fold(v: f64, fallback: Expr) -> Expr {
    if v.is_finite() {
        Expr::Num(v)
    } else {
        fallback
    }
}

pub fn neg(e: Expr) -> Expr {
    match e {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_num(), b.as_num()) {
        (Some(x), Some(y)) => fold(x + y, Expr::Bin(BinOp::Add, Box::new(a), Box::new(b))),
        (Some(x), None) if x == 0.0 => b,
        (None, Some(y)) if y == 0.0 => a,
        _ => Expr::Bin(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_num(), b.as_num()) {
        (Some(x), Some(y)) => fold(x - y, Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b))),
        (Some(x), None) if x == 0.0 => neg(b),
        (None, Some(y)) if y == 0.0 => a,
        _ => Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    if a.is_zero() || b.is_zero() {
        return Expr::Num(0.0);
    }
    match (a.as_num(), b.as_num()) {
        (Some(x), Some(y)) => fold(x * y, Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b))),
        _ if a.is_one() => b,
        _ if b.is_one() => a,
        (Some(x), None) if x == -1.0 => neg(b),
        (None, Some(y)) if y == -1.0 => neg(a),
        _ => Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_num(), b.as_num()) {
        (Some(x), Some(y)) if y != 0.0 => fold(x / y, Expr::Bin(BinOp::Div, Box::new(a), Box::new(b))),
        (Some(x), _) if x == 0.0 && !b.is_zero() => Expr::Num(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::Bin(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

pub fn pow(e: Expr, k: u32) -> Expr {
    match (k, e.as_num()) {
        (0, _) => Expr::Num(1.0),
        (1, _) => e,
        (_, Some(v)) => fold(v.powi(k as i32), Expr::Pow(Box::new(e), k)),
        _ => Expr::Pow(Box::new(e), k),
    }
}

pub fn call(f: Func, e: Expr) -> Expr {
    Expr::Call(f, Box::new(e))
}

pub fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
    match op {
        BinOp::Add => add(a, b),
        BinOp::Sub => sub(a, b),
        BinOp::Mul => mul(a, b),
        BinOp::Div => div(a, b),
    }
}

/// Sum of `coef * term` pairs with zero coefficients dropped.
pub fn linear_combination(terms: impl IntoIterator<Item = (f64, Expr)>) -> Expr {
    let mut acc = Expr::Num(0.0);
    for (c, e) in terms {
        if c == 0.0 {
            continue;
        }
        acc = if acc.is_zero() {
            mul(Expr::Num(c), e)
        } else if c < 0.0 {
            sub(acc, mul(Expr::Num(-c), e))
        } else {
            add(acc, mul(Expr::Num(c), e))
        };
    }
    acc
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if v.is_sign_negative() {
                    write!(f, "({v})")
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Neg(e) => {
                if e.prec() < 3 {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
            Expr::Bin(op, a, b) => {
                if a.prec() < op.prec() {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {} ", op.symbol())?;
                // right operands at equal precedence keep their grouping
                if b.prec() <= op.prec() {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
            Expr::Pow(e, k) => {
                if e.prec() < 5 {
                    write!(f, "({e})^{k}")
                } else {
                    write!(f, "{e}^{k}")
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Int(u32),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(usize, Tok)>> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (at, tok) = lx.next()?;
            let end = tok == Tok::End;
            out.push((at, tok));
            if end {
                return Ok(out);
            }
        }
    }

    fn next(&mut self) -> Result<(usize, Tok)> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        if start >= bytes.len() {
            return Ok((start, Tok::End));
        }
        let c = bytes[start];
        if c.is_ascii_digit() || c == b'.' {
            return self.number(start).map(|t| (start, t));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                self.pos += 1;
            }
            return Ok((start, Tok::Ident(self.src[start..self.pos].to_string())));
        }
        if b"+-*/^()".contains(&c) {
            self.pos += 1;
            return Ok((start, Tok::Op(c as char)));
        }
        Err(Error::SyntaxError { offset: start, expected: "number, identifier, operator or parenthesis".into() })
    }

    fn number(&mut self, start: usize) -> Result<Tok> {
        let bytes = self.src.as_bytes();
        let digits = |pos: &mut usize| {
            let s = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            *pos - s
        };
        let int_digits = digits(&mut self.pos);
        let mut is_int = true;
        if self.pos < bytes.len() && bytes[self.pos] == b'.' {
            is_int = false;
            self.pos += 1;
            let frac = digits(&mut self.pos);
            if int_digits + frac == 0 {
                return Err(Error::SyntaxError { offset: start, expected: "digit".into() });
            }
        }
        if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < bytes.len() && (bytes[self.pos] == b'+' || bytes[self.pos] == b'-') {
                self.pos += 1;
            }
            if digits(&mut self.pos) == 0 {
                // not an exponent after all, e.g. `2e` is a syntax error at the `e`
                return Err(Error::SyntaxError { offset: save + 1, expected: "exponent digits".into() });
            }
            is_int = false;
        }
        let text = &self.src[start..self.pos];
        if is_int {
            if let Ok(k) = text.parse::<u32>() {
                return Ok(Tok::Int(k));
            }
        }
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Tok::Num)
            .ok_or(Error::SyntaxError { offset: start, expected: "finite number".into() })
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    i: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].1
    }

    fn offset(&self) -> usize {
        self.toks[self.i].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].1.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &str) -> Result<T> {
        Err(Error::SyntaxError { offset: self.offset(), expected: expected.to_string() })
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == &Tok::Op('-') {
            self.bump();
            return Ok(match self.unary()? {
                Expr::Num(v) => Expr::Num(-v),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let mut base = self.atom()?;
        while self.peek() == &Tok::Op('^') {
            self.bump();
            match self.bump() {
                Tok::Int(k) => base = Expr::Pow(Box::new(base), k),
                _ => {
                    self.i -= 1;
                    return self.fail("nonnegative integer exponent");
                }
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let at = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Int(k) => Ok(Expr::Num(k as f64)),
            Tok::Ident(name) => {
                if self.peek() == &Tok::Op('(') {
                    let func = Func::from_name(&name).ok_or(Error::UnknownIdentifier(name.clone()))?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_close()?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect_close()?;
                Ok(e)
            }
            _ => Err(Error::SyntaxError { offset: at, expected: "number, identifier, '-' or '('".into() }),
        }
    }

    fn expect_close(&mut self) -> Result<()> {
        if self.peek() == &Tok::Op(')') {
            self.bump();
            Ok(())
        } else {
            self.fail("')'")
        }
    }
}

/// Parses one expression; trailing input is a syntax error.
pub fn parse_expr(text: &str) -> Result<Expr> {
    let mut p = Parser { toks: Lexer::tokens(text)?, i: 0 };
    let e = p.expr()?;
    if p.peek() != &Tok::End {
        return p.fail("operator or end of input");
    }
    Ok(e)
}

/// Evaluates against a map of bindings.
pub fn eval_expr(ast: &Expr, env: &HashMap<String, f64>) -> Result<f64> {
    ast.eval_with(&|name| env.get(name).copied())
}

// ---------------------------------------------------------------------------
// Slot-compiled form for repeated evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Slot(usize),
    Neg(Box<Node>),
    Call(Func, Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Pow(Box<Node>, u32),
}

impl Node {
    fn eval(&self, vals: &[f64]) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Slot(i) => vals[*i],
            Node::Neg(e) => -e.eval(vals),
            Node::Call(f, e) => f.apply(e.eval(vals)),
            Node::Bin(op, a, b) => op.apply(a.eval(vals), b.eval(vals)),
            Node::Pow(e, k) => e.eval(vals).powi(*k as i32),
        }
    }
}

/// Expression with variables resolved to positions in an argument slice.
#[derive(Debug, Clone)]
pub struct Compiled {
    source: Expr,
    root: Node,
}

impl Compiled {
    /// `resolve` maps a variable name to its slot; unresolved names other than
    /// `pi` are reported as `UnknownIdentifier`.
    pub fn new(ast: &Expr, resolve: &dyn Fn(&str) -> Option<usize>) -> Result<Compiled> {
        Ok(Compiled { source: ast.clone(), root: Self::lower(ast, resolve)? })
    }

    fn lower(e: &Expr, resolve: &dyn Fn(&str) -> Option<usize>) -> Result<Node> {
        Ok(match e {
            Expr::Num(v) => Node::Num(*v),
            Expr::Var(name) => match resolve(name) {
                Some(i) => Node::Slot(i),
                None if name == PI_NAME => Node::Num(std::f64::consts::PI),
                None => return Err(Error::UnknownIdentifier(name.clone())),
            },
            Expr::Neg(a) => Node::Neg(Box::new(Self::lower(a, resolve)?)),
            Expr::Call(f, a) => Node::Call(*f, Box::new(Self::lower(a, resolve)?)),
            Expr::Bin(op, a, b) => {
                Node::Bin(*op, Box::new(Self::lower(a, resolve)?), Box::new(Self::lower(b, resolve)?))
            }
            Expr::Pow(a, k) => Node::Pow(Box::new(Self::lower(a, resolve)?), *k),
        })
    }

    pub fn source(&self) -> &Expr {
        &self.source
    }

    pub fn eval(&self, vals: &[f64]) -> Result<f64> {
        let v = self.root.eval(vals);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonfiniteResult(format!("`{}` evaluated to {v}", self.source)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(text: &str, bind: &[(&str, f64)]) -> Result<f64> {
        let env: HashMap<String, f64> = bind.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        eval_expr(&parse_expr(text)?, &env)
    }

    #[test]
    fn parse_examples() {
        let v = ev("q^3 + q - p1^2 - 2*p2^2", &[("p1", 0.0), ("p2", 0.0), ("q", 1.0)]).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(ev("sin(t)", &[("t", 0.0)]).unwrap(), 0.0);
        assert_eq!(ev("2*3+4", &[]).unwrap(), 10.0);
        assert_eq!(ev("2*(3+4)", &[]).unwrap(), 14.0);
    }

    #[test]
    fn eval_examples() {
        assert_eq!(ev("x1+y1", &[("x1", 1.0), ("y1", 2.0)]).unwrap(), 3.0);
        assert!((ev("cos(t)^2", &[("t", std::f64::consts::PI)]).unwrap() - 1.0).abs() < 1e-15);
        let v = ev("(2+cos(t))*x1+x2+y1", &[("t", 0.0), ("x1", 1.0), ("x2", 1.0), ("y1", 1.0)]).unwrap();
        assert_eq!(v, 5.0);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("8-3-2", &[]).unwrap(), 3.0);
        assert_eq!(ev("8/4/2", &[]).unwrap(), 1.0);
        assert_eq!(ev("-2^2", &[]).unwrap(), -4.0);
        assert_eq!(ev("2^3^2", &[]).unwrap(), 64.0);
        assert_eq!(ev("-x*3", &[("x", 2.0)]).unwrap(), -6.0);
        assert_eq!(ev("2*pi", &[]).unwrap(), 2.0 * std::f64::consts::PI);
        assert_eq!(ev("2*pi", &[("pi", 1.0)]).unwrap(), 2.0);
        assert_eq!(ev("1.5e2 + .5", &[]).unwrap(), 150.5);
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_expr("2 +"), Err(Error::SyntaxError { offset: 3, .. })));
        assert!(matches!(parse_expr("(1"), Err(Error::SyntaxError { offset: 2, .. })));
        assert!(matches!(parse_expr("x^1.5"), Err(Error::SyntaxError { offset: 2, .. })));
        assert!(matches!(parse_expr("1 $ 2"), Err(Error::SyntaxError { offset: 2, .. })));
        assert!(matches!(parse_expr("1 2"), Err(Error::SyntaxError { offset: 2, .. })));
        assert!(matches!(parse_expr("tan(x)"), Err(Error::UnknownIdentifier(n)) if n == "tan"));
        assert!(matches!(ev("x + 1", &[]), Err(Error::UnboundVariable(n)) if n == "x"));
        assert!(matches!(ev("1/x", &[("x", 0.0)]), Err(Error::NonfiniteResult(_))));
        let c = Compiled::new(&parse_expr("z").unwrap(), &|_| None);
        assert!(matches!(c, Err(Error::UnknownIdentifier(_))));
    }

    #[test]
    fn derivatives() {
        let e = parse_expr("q^3 + q - p1^2 - 2*p2^2").unwrap();
        let dq = e.diff("q");
        let dp2 = e.diff("p2");
        let at = |x: &Expr| ev(&x.to_string(), &[("q", 2.0), ("p1", 1.0), ("p2", 3.0)]).unwrap();
        assert_eq!(at(&dq), 13.0);
        assert_eq!(at(&dp2), -12.0);
        let e = parse_expr("sin(2*t)*exp(t)/cos(t)").unwrap();
        let d = e.diff("t");
        let f = |t: f64| (2.0 * t).sin() * t.exp() / t.cos();
        let t0 = 0.3;
        let h = 1e-6;
        let fd = (f(t0 + h) - f(t0 - h)) / (2.0 * h);
        assert!((ev(&d.to_string(), &[("t", t0)]).unwrap() - fd).abs() < 1e-7);
    }

    #[test]
    fn printing_round_trips() {
        for text in ["a - (b - c)", "a / (b * c)", "-(a + b)", "(-2)^2", "(a + b)^3", "x - (-2)", "--x", "-2^2"] {
            let e = parse_expr(text).unwrap();
            let printed = e.to_string();
            assert_eq!(parse_expr(&printed).unwrap(), e, "{text} -> {printed}");
        }
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-5.0f64..5.0).prop_map(Expr::Num),
            prop::sample::select(vec!["x", "y", "t"]).prop_map(Expr::var),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (prop::sample::select(vec![Func::Sin, Func::Cos, Func::Exp]), inner.clone())
                    .prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
                (prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div]), inner.clone(), inner.clone())
                    .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
                (inner, 0u32..4).prop_map(|(e, k)| Expr::Pow(Box::new(e), k)),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn print_parse_evaluates_identically(e in arb_expr(), envs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 100)) {
            let back = parse_expr(&e.to_string()).unwrap();
            for (x, y, t) in envs {
                let env = |n: &str| match n { "x" => Some(x), "y" => Some(y), "t" => Some(t), _ => None };
                let a = e.eval_raw(&env).unwrap();
                let b = back.eval_raw(&env).unwrap();
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()), "{} vs {}: {} {}", e, back, a, b);
            }
        }
    }
}
