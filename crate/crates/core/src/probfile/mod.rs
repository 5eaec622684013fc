//! Line-oriented problem files.
//!
//! ```text
//! # comment
//! name = rotating_surface
//! kind = dae1            # dae1 | dae2 | semilinear
//! m = 2                  # dae kinds: m and s; semilinear: n
//! s = 1
//! period = 2*pi
//! derivatives = analytic # or fd
//!
//! [f]
//! cos(t) - x1
//! -x2
//! [g]
//! q^3 + q - p1^2 - 2*p2^2
//! [A]
//! cos(t), -sin(t)
//! sin(t), cos(t)
//! [B]
//! 1
//! ```
//!
//! Sections hold one row per line with comma-separated entries; vector sections
//! have one entry per row. Sections by kind:
//!
//! * `dae1`: `f`, `g`, `A`, `B`, optional `H`, `dA`, `ddA`, `dB`, `ddB`
//! * `dae2`: as `dae1` with optional `H1`, `H2` instead of `H`
//! * `semilinear`: `E` (constant), `F`, `C` (in `t`), `S` (in `x1..xn`)
//!
//! Variables: `f` sees `t`, `x1..xm`, `y1..ys` (aliases `xi*`, `eta*`) and for
//! `dae2` also the velocities `u1..um`, `v1..vs`; `g` sees `p1..pm`, `q1..qs`
//! (aliases `x*`/`xi*` and `y*`/`eta*`). A bare name such as `q` stands for `q1`
//! when that block has dimension one. `pi` is a constant.

pub mod expr;
pub mod serialize;

use std::sync::Arc;

use crate::densela::Mat;
use crate::error::{Error, Result};
use crate::matpath::MatrixPath;
use crate::slred::SemiLinearDae;
use crate::transform::{Constraint, DaeProblem, DaeProblem1, DaeProblem2, Forcing1, Forcing2};
use expr::{parse_expr, Compiled, Expr};

pub type ExprMatrix = Vec<Vec<Expr>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Dae1,
    Dae2,
    SemiLinear,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Dae1 => "dae1",
            Kind::Dae2 => "dae2",
            Kind::SemiLinear => "semilinear",
        }
    }
}

/// Section names in file order.
const SECTIONS: &[&str] = &["f", "g", "A", "B", "H", "H1", "H2", "dA", "ddA", "dB", "ddB", "E", "F", "C", "S"];

/// Parsed, shape-checked problem description.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub kind: Kind,
    /// `m`, `s` for dae kinds; `n` (stored in `m`) for semilinear
    pub m: usize,
    pub s: usize,
    pub period: f64,
    pub fd_derivatives: bool,
    /// sections in [`SECTIONS`] order, absent ones omitted
    pub sections: Vec<(String, ExprMatrix)>,
}

/// A buildable problem.
#[derive(Clone, Debug)]
pub enum Problem {
    Dae(DaeProblem),
    SemiLinear(SemiLinearDae),
}

impl Problem {
    pub fn name(&self) -> &str {
        match self {
            Problem::Dae(p) => p.name(),
            Problem::SemiLinear(p) => &p.name,
        }
    }
}

fn schema<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::SchemaError(msg.into()))
}

fn indexed(name: &str, prefix: &str, dim: usize) -> Option<usize> {
    let idx: usize = name.strip_prefix(prefix)?.parse().ok()?;
    (1..=dim).contains(&idx).then_some(idx)
}

/// Canonical name for a forcing variable: `t`, `x<i>`, `y<i>`, `u<i>`, `v<i>`.
fn forcing_canonical(name: &str, m: usize, s: usize, order: usize) -> Option<String> {
    if name == "t" {
        return Some("t".into());
    }
    let bare = |n: &str, dim: usize| (name == n && dim == 1).then_some(1);
    let mut groups: Vec<(&str, &[&str], usize)> = vec![("x", &["x", "xi"], m), ("y", &["y", "eta"], s)];
    if order == 2 {
        groups.push(("u", &["u"], m));
        groups.push(("v", &["v"], s));
    }
    for (canon, prefixes, dim) in groups {
        for p in prefixes {
            if let Some(i) = indexed(name, p, dim).or_else(|| bare(p, dim)) {
                return Some(format!("{canon}{i}"));
            }
        }
    }
    None
}

/// Canonical name for a constraint variable: `p<i>` or `q<i>`.
fn constraint_canonical(name: &str, m: usize, s: usize) -> Option<String> {
    for (canon, prefixes, dim) in [("p", ["p", "x", "xi"], m), ("q", ["q", "y", "eta"], s)] {
        for p in prefixes {
            if let Some(i) = indexed(name, p, dim).or_else(|| (name == p && dim == 1).then_some(1)) {
                return Some(format!("{canon}{i}"));
            }
        }
    }
    None
}

/// Rewrites every variable to its canonical name; unknown names are errors.
fn canonicalize(e: &Expr, canon: &dyn Fn(&str) -> Option<String>) -> Result<Expr> {
    for v in e.variables() {
        if v != expr::PI_NAME && canon(&v).is_none() {
            return Err(Error::UnknownIdentifier(v));
        }
    }
    Ok(e.substitute(&|v| canon(v).map(|c| Expr::Var(c))))
}

fn slots(names: &[String]) -> impl Fn(&str) -> Option<usize> + '_ {
    move |n| names.iter().position(|x| x == n)
}

fn names(prefix: &str, dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("{prefix}{i}")).collect()
}

/// Constraint defined by expressions, with symbolic Jacobians.
pub struct ExprConstraint {
    m: usize,
    s: usize,
    g: Vec<Compiled>,
    jp: Vec<Compiled>,
    jq: Vec<Compiled>,
}

impl ExprConstraint {
    pub fn new(exprs: &[Expr], m: usize, s: usize) -> Result<ExprConstraint> {
        if exprs.len() != s {
            return schema(format!("g has {} components, expected s = {s}", exprs.len()));
        }
        let mut vars = names("p", m);
        vars.extend(names("q", s));
        let resolve = slots(&vars);
        let canon: Vec<Expr> =
            exprs.iter().map(|e| canonicalize(e, &|v| constraint_canonical(v, m, s))).collect::<Result<_>>()?;
        let compile = |e: &Expr| Compiled::new(e, &resolve);
        let g = canon.iter().map(compile).collect::<Result<Vec<_>>>()?;
        let mut jp = Vec::with_capacity(s * m);
        let mut jq = Vec::with_capacity(s * s);
        for e in &canon {
            for v in &vars[..m] {
                jp.push(compile(&e.diff(v))?);
            }
            for v in &vars[m..] {
                jq.push(compile(&e.diff(v))?);
            }
        }
        Ok(ExprConstraint { m, s, g, jp, jq })
    }

    fn args(&self, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.m || q.len() != self.s {
            return Err(Error::DimensionMismatch(format!(
                "constraint called with |p|={}, |q|={}, expected {}, {}",
                p.len(),
                q.len(),
                self.m,
                self.s
            )));
        }
        Ok(p.iter().chain(q).copied().collect())
    }
}

impl Constraint for ExprConstraint {
    fn m(&self) -> usize {
        self.m
    }
    fn s(&self) -> usize {
        self.s
    }
    fn eval(&self, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        let a = self.args(p, q)?;
        self.g.iter().map(|c| c.eval(&a)).collect()
    }
    fn jac_p(&self, p: &[f64], q: &[f64]) -> Result<Mat> {
        let a = self.args(p, q)?;
        Mat::from_vec(self.s, self.m, self.jp.iter().map(|c| c.eval(&a)).collect::<Result<_>>()?)
    }
    fn jac_q(&self, p: &[f64], q: &[f64]) -> Result<Mat> {
        let a = self.args(p, q)?;
        Mat::from_vec(self.s, self.s, self.jq.iter().map(|c| c.eval(&a)).collect::<Result<_>>()?)
    }
}

fn compile_forcing(exprs: &[Expr], m: usize, s: usize, order: usize) -> Result<Vec<Compiled>> {
    if exprs.len() != m {
        return schema(format!("f has {} components, expected m = {m}", exprs.len()));
    }
    let mut vars = vec!["t".to_string()];
    vars.extend(names("x", m));
    vars.extend(names("y", s));
    if order == 2 {
        vars.extend(names("u", m));
        vars.extend(names("v", s));
    }
    let resolve = slots(&vars);
    exprs
        .iter()
        .map(|e| Compiled::new(&canonicalize(e, &|v| forcing_canonical(v, m, s, order))?, &resolve))
        .collect()
}

/// Builds a first-order forcing closure from expressions.
pub fn forcing1(exprs: &[Expr], m: usize, s: usize) -> Result<Forcing1> {
    let c = compile_forcing(exprs, m, s, 1)?;
    Ok(Arc::new(move |t: f64, x: &[f64], y: &[f64]| {
        let mut a = Vec::with_capacity(1 + x.len() + y.len());
        a.push(t);
        a.extend_from_slice(x);
        a.extend_from_slice(y);
        c.iter().map(|e| e.eval(&a)).collect()
    }))
}

/// Builds a second-order forcing closure from expressions.
pub fn forcing2(exprs: &[Expr], m: usize, s: usize) -> Result<Forcing2> {
    let c = compile_forcing(exprs, m, s, 2)?;
    Ok(Arc::new(move |t: f64, x: &[f64], y: &[f64], dx: &[f64], dy: &[f64]| {
        let mut a = Vec::with_capacity(1 + 2 * (x.len() + y.len()));
        a.push(t);
        for part in [x, y, dx, dy] {
            a.extend_from_slice(part);
        }
        c.iter().map(|e| e.eval(&a)).collect()
    }))
}

/// Evaluates a matrix of constant expressions.
pub fn const_matrix(rows: &ExprMatrix) -> Result<Mat> {
    let vals = rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|e| {
                    e.eval_with(&|_| None).map_err(|err| match err {
                        Error::UnboundVariable(v) => Error::UnknownIdentifier(v),
                        other => other,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mat::from_rows(&vals))
}

impl ProblemSpec {
    pub fn section(&self, name: &str) -> Option<&ExprMatrix> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    fn vector(&self, name: &str) -> Option<Vec<Expr>> {
        self.section(name).map(|rows| rows.iter().map(|r| r[0].clone()).collect())
    }

    /// Inserts or replaces a section, keeping file order.
    pub fn set_section(&mut self, name: &str, rows: ExprMatrix) {
        self.sections.retain(|(n, _)| n != name);
        self.sections.push((name.to_string(), rows));
        self.sections.sort_by_key(|(n, _)| SECTIONS.iter().position(|s| s == n));
    }

    /// Shape and membership checks per kind.
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) || !self.period.is_finite() {
            return schema(format!("period must be positive, got {}", self.period));
        }
        let (m, s) = (self.m, self.s);
        if m == 0 || (self.kind != Kind::SemiLinear && s == 0) {
            return schema("dimensions must be positive");
        }
        let (required, optional): (&[&str], &[&str]) = match self.kind {
            Kind::Dae1 => (&["f", "g", "A", "B"], &["H", "dA", "ddA", "dB", "ddB"]),
            Kind::Dae2 => (&["f", "g", "A", "B"], &["H1", "H2", "dA", "ddA", "dB", "ddB"]),
            Kind::SemiLinear => (&["E", "F", "C", "S"], &[]),
        };
        for r in required {
            if self.section(r).is_none() {
                return schema(format!("missing section [{r}] for kind {}", self.kind.as_str()));
            }
        }
        for (name, _) in &self.sections {
            if !required.contains(&name.as_str()) && !optional.contains(&name.as_str()) {
                return schema(format!("section [{name}] not allowed for kind {}", self.kind.as_str()));
            }
        }
        for (name, rows) in &self.sections {
            let (r, c) = match name.as_str() {
                "f" => (m, 1),
                "g" => (s, 1),
                "A" | "dA" | "ddA" | "H" | "H1" | "H2" => (m, m),
                "B" | "dB" | "ddB" => (s, s),
                "E" | "F" | "C" => (m, m),
                "S" => (m, 1),
                _ => unreachable!("section list is closed"),
            };
            if rows.len() != r || rows.iter().any(|row| row.len() != c) {
                let got_c = rows.first().map(|x| x.len()).unwrap_or(0);
                return schema(format!("[{name}] must be {r}x{c}, got {}x{got_c}", rows.len()));
            }
        }
        Ok(())
    }

    fn path(&self, name: &str) -> Result<MatrixPath> {
        let rows = self.section(name).expect("validated");
        let d1 = self.section(&format!("d{name}"));
        let d2 = self.section(&format!("dd{name}"));
        for rows in [Some(rows), d1, d2].into_iter().flatten() {
            for e in rows.iter().flatten() {
                for v in e.variables() {
                    if v != "t" && v != expr::PI_NAME {
                        return Err(Error::UnknownIdentifier(v));
                    }
                }
            }
        }
        let p = MatrixPath::from_exprs(rows, self.period, d1.map(|v| v.as_slice()), d2.map(|v| v.as_slice()))?
            .with_label(name);
        Ok(if self.fd_derivatives { p.with_fd(None) } else { p })
    }

    fn opt_const(&self, name: &str) -> Result<Option<Mat>> {
        self.section(name).map(const_matrix).transpose()
    }

    /// Compiles the description into a problem object and checks periodicity of its paths.
    pub fn build(&self) -> Result<Problem> {
        self.validate()?;
        let (m, s) = (self.m, self.s);
        match self.kind {
            Kind::Dae1 | Kind::Dae2 => {
                let f = self.vector("f").unwrap();
                let g: Arc<dyn Constraint> = Arc::new(ExprConstraint::new(&self.vector("g").unwrap(), m, s)?);
                let a = self.path("A")?;
                let b = self.path("B")?;
                let prob = if self.kind == Kind::Dae1 {
                    DaeProblem::First(DaeProblem1 {
                        name: self.name.clone(),
                        period: self.period,
                        m,
                        s,
                        f: forcing1(&f, m, s)?,
                        g,
                        a,
                        b,
                        h: self.opt_const("H")?,
                    })
                } else {
                    DaeProblem::Second(DaeProblem2 {
                        name: self.name.clone(),
                        period: self.period,
                        m,
                        s,
                        f: forcing2(&f, m, s)?,
                        g,
                        a,
                        b,
                        h1: self.opt_const("H1")?,
                        h2: self.opt_const("H2")?,
                    })
                };
                prob.validate()?;
                Ok(Problem::Dae(prob))
            }
            Kind::SemiLinear => {
                let e = const_matrix(self.section("E").unwrap())?;
                let dae = SemiLinearDae::new(
                    &self.name,
                    e,
                    self.section("F").unwrap().clone(),
                    self.section("C").unwrap().clone(),
                    self.vector("S").unwrap(),
                    self.period,
                    self.fd_derivatives,
                )?;
                Ok(Problem::SemiLinear(dae))
            }
        }
    }

    /// Serializes to the text format; `parse_problem(spec.to_text())` reproduces `spec`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("name = {}\n", self.name));
        out.push_str(&format!("kind = {}\n", self.kind.as_str()));
        if self.kind == Kind::SemiLinear {
            out.push_str(&format!("n = {}\n", self.m));
        } else {
            out.push_str(&format!("m = {}\ns = {}\n", self.m, self.s));
        }
        out.push_str(&format!("period = {}\n", self.period));
        if self.fd_derivatives {
            out.push_str("derivatives = fd\n");
        }
        for (name, rows) in &self.sections {
            out.push_str(&format!("\n[{name}]\n"));
            for row in rows {
                let cells: Vec<String> = row.iter().map(|e| e.to_string()).collect();
                out.push_str(&cells.join(", "));
                out.push('\n');
            }
        }
        out
    }
}

/// Parses a problem file. Expression syntax errors are reported with their line.
pub fn parse_problem(text: &str) -> Result<ProblemSpec> {
    let mut name = None;
    let mut kind = None;
    let mut dims: [Option<usize>; 3] = [None; 3];
    let mut period = None;
    let mut fd = false;
    let mut sections: Vec<(String, ExprMatrix)> = Vec::new();
    let mut current: Option<usize> = None;

    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(sec) = line.strip_prefix('[') {
            let sec = sec
                .strip_suffix(']')
                .ok_or_else(|| Error::SchemaError(format!("line {ln}: unterminated section header")))?
                .trim();
            if !SECTIONS.contains(&sec) {
                return schema(format!("line {ln}: unknown section [{sec}]"));
            }
            if sections.iter().any(|(n, _)| n == sec) {
                return schema(format!("line {ln}: duplicate section [{sec}]"));
            }
            sections.push((sec.to_string(), Vec::new()));
            current = Some(sections.len() - 1);
            continue;
        }
        match current {
            Some(idx) => {
                let row = line
                    .split(',')
                    .map(|cell| {
                        parse_expr(cell.trim()).map_err(|e| match e {
                            Error::SyntaxError { offset, expected } => Error::SchemaError(format!(
                                "line {ln}: syntax error at column {}: expected {expected}",
                                offset + 1
                            )),
                            other => other,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                sections[idx].1.push(row);
            }
            None => {
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| Error::SchemaError(format!("line {ln}: expected `key = value`")))?;
                let (key, value) = (key.trim(), value.trim());
                let count = |v: &str| {
                    v.parse::<usize>().map_err(|_| Error::SchemaError(format!("line {ln}: `{key}` must be a count")))
                };
                let seen = match key {
                    "name" => name.replace(value.to_string()).is_some(),
                    "kind" => {
                        let k = match value {
                            "dae1" => Kind::Dae1,
                            "dae2" => Kind::Dae2,
                            "semilinear" => Kind::SemiLinear,
                            _ => return schema(format!("line {ln}: unknown kind `{value}`")),
                        };
                        kind.replace(k).is_some()
                    }
                    "m" => dims[0].replace(count(value)?).is_some(),
                    "s" => dims[1].replace(count(value)?).is_some(),
                    "n" => dims[2].replace(count(value)?).is_some(),
                    "period" => {
                        let v = parse_expr(value)
                            .and_then(|e| e.eval_with(&|_| None))
                            .map_err(|e| Error::SchemaError(format!("line {ln}: period: {e}")))?;
                        period.replace(v).is_some()
                    }
                    "derivatives" => {
                        fd = match value {
                            "analytic" => false,
                            "fd" => true,
                            _ => return schema(format!("line {ln}: derivatives must be analytic or fd")),
                        };
                        false
                    }
                    _ => return schema(format!("line {ln}: unknown key `{key}`")),
                };
                if seen {
                    return schema(format!("line {ln}: duplicate key `{key}`"));
                }
            }
        }
    }

    let kind = kind.ok_or_else(|| Error::SchemaError("missing key `kind`".into()))?;
    let period = period.ok_or_else(|| Error::SchemaError("missing key `period`".into()))?;
    let (m, s) = match kind {
        Kind::SemiLinear => {
            if dims[0].is_some() || dims[1].is_some() {
                return schema("semilinear problems take `n`, not `m`/`s`");
            }
            let n = dims[2].ok_or_else(|| Error::SchemaError("missing key `n`".into()))?;
            (n, 0)
        }
        _ => {
            if dims[2].is_some() {
                return schema("dae problems take `m` and `s`, not `n`");
            }
            (
                dims[0].ok_or_else(|| Error::SchemaError("missing key `m`".into()))?,
                dims[1].ok_or_else(|| Error::SchemaError("missing key `s`".into()))?,
            )
        }
    };
    sections.sort_by_key(|(n, _)| SECTIONS.iter().position(|s| s == n));
    let spec = ProblemSpec {
        name: name.unwrap_or_else(|| "problem".into()),
        kind,
        m,
        s,
        period,
        fd_derivatives: fd,
        sections,
    };
    spec.validate()?;
    Ok(spec)
}
