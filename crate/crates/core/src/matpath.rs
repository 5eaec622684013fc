//! Periodic matrix paths `t -> A(t)` with first and second derivatives, and
//! grid audits of the orthogonal-frame hypotheses and the identities they imply.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::densela::{expm, Mat};
use crate::error::{Error, Result};
use crate::probfile::expr::{parse_expr, Compiled, Expr};

/// Default number of audit grid points over one period.
pub const DEFAULT_GRID: usize = 64;
/// Default constancy tolerance with analytic derivatives.
pub const TOL_ANALYTIC: f64 = 1e-8;
/// Default constancy tolerance with finite-difference derivatives.
pub const TOL_FD: f64 = 1e-5;
/// Tolerance for `A(t + T) = A(t)`.
pub const PERIODICITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeMode {
    Analytic,
    /// Central differences with the given step.
    FiniteDifference(f64),
}

/// Closure-backed path: `(t, order) -> d^order A / dt^order`.
pub type PathFn = Arc<dyn Fn(f64, usize) -> Result<Mat> + Send + Sync>;

#[derive(Clone)]
enum PathKind {
    Constant(Mat),
    Table(Arc<ExprTable>),
    ExpFrame { s: Mat, a0: Mat },
    Custom(PathFn),
}

struct ExprTable {
    rows: Vec<Vec<Expr>>,
    /// compiled entries for orders 0, 1, 2, row-major
    compiled: [Vec<Compiled>; 3],
}

/// A `T`-periodic square-matrix path.
#[derive(Clone)]
pub struct MatrixPath {
    n: usize,
    period: f64,
    kind: PathKind,
    mode: DerivativeMode,
    label: String,
}

impl fmt::Debug for MatrixPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MatrixPath({}, n={}, T={}, {:?})", self.label, self.n, self.period, self.mode)
    }
}

fn time_slot(name: &str) -> Option<usize> {
    (name == "t").then_some(0)
}

impl MatrixPath {
    pub fn constant(a: Mat, period: f64) -> MatrixPath {
        assert!(a.is_square(), "paths are square");
        MatrixPath {
            n: a.rows(),
            period,
            kind: PathKind::Constant(a),
            mode: DerivativeMode::Analytic,
            label: "constant".into(),
        }
    }

    pub fn identity(n: usize, period: f64) -> MatrixPath {
        MatrixPath::constant(Mat::identity(n), period)
    }

    /// Path from an entry table of expressions in `t`. Missing derivative tables are
    /// produced by symbolic differentiation.
    pub fn from_exprs(
        rows: &[Vec<Expr>],
        period: f64,
        d1: Option<&[Vec<Expr>]>,
        d2: Option<&[Vec<Expr>]>,
    ) -> Result<MatrixPath> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::SchemaError(format!("matrix path must be square, got {n} rows")));
        }
        for d in [d1, d2].into_iter().flatten() {
            if d.len() != n || d.iter().any(|r| r.len() != n) {
                return Err(Error::SchemaError("derivative table shape differs from path".into()));
            }
        }
        let flat0: Vec<Expr> = rows.iter().flatten().cloned().collect();
        let flat1: Vec<Expr> = match d1 {
            Some(d) => d.iter().flatten().cloned().collect(),
            None => flat0.iter().map(|e| e.diff("t")).collect(),
        };
        let flat2: Vec<Expr> = match d2 {
            Some(d) => d.iter().flatten().cloned().collect(),
            None => flat1.iter().map(|e| e.diff("t")).collect(),
        };
        let compile = |v: &[Expr]| v.iter().map(|e| Compiled::new(e, &time_slot)).collect::<Result<Vec<_>>>();
        let table = ExprTable { rows: rows.to_vec(), compiled: [compile(&flat0)?, compile(&flat1)?, compile(&flat2)?] };
        Ok(MatrixPath {
            n,
            period,
            kind: PathKind::Table(Arc::new(table)),
            mode: DerivativeMode::Analytic,
            label: "table".into(),
        })
    }

    /// Convenience: entries given as source text.
    pub fn from_strs<R: AsRef<[&'static str]>>(rows: &[R], period: f64) -> Result<MatrixPath> {
        let parsed = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|s| parse_expr(s)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        MatrixPath::from_exprs(&parsed, period, None, None)
    }

    /// `A(t) = e^{tS} A0`.
    pub fn exp_frame(s: Mat, a0: Mat, period: f64) -> MatrixPath {
        assert!(s.is_square() && a0.is_square() && s.rows() == a0.rows(), "exp_frame shapes");
        MatrixPath {
            n: s.rows(),
            period,
            kind: PathKind::ExpFrame { s, a0 },
            mode: DerivativeMode::Analytic,
            label: "exp_frame".into(),
        }
    }

    pub fn custom(n: usize, period: f64, label: &str, f: PathFn) -> MatrixPath {
        MatrixPath { n, period, kind: PathKind::Custom(f), mode: DerivativeMode::Analytic, label: label.into() }
    }

    /// Switches to central finite differences; `None` picks `1e-4 * max(1, T)`.
    pub fn with_fd(mut self, h: Option<f64>) -> MatrixPath {
        self.mode = DerivativeMode::FiniteDifference(h.unwrap_or(1e-4 * self.period.max(1.0)));
        self
    }

    pub fn with_label(mut self, label: &str) -> MatrixPath {
        self.label = label.into();
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn mode(&self) -> DerivativeMode {
        self.mode
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Entry expressions when the path is table-backed.
    pub fn exprs(&self) -> Option<&[Vec<Expr>]> {
        match &self.kind {
            PathKind::Table(t) => Some(&t.rows),
            _ => None,
        }
    }

    pub fn constant_value(&self) -> Option<&Mat> {
        match &self.kind {
            PathKind::Constant(m) => Some(m),
            _ => None,
        }
    }

    /// `A(t)`, `A'(t)` or `A''(t)`.
    pub fn eval(&self, t: f64, order: usize) -> Result<Mat> {
        if order > 2 {
            return Err(Error::EvaluationFailure(format!("derivative order {order} not supported")));
        }
        let out = match (self.mode, order) {
            (_, 0) | (DerivativeMode::Analytic, _) => self.eval_exact(t, order)?,
            (DerivativeMode::FiniteDifference(h), 1) => {
                let p = self.eval_exact(t + h, 0)?;
                let m = self.eval_exact(t - h, 0)?;
                (&p - &m).scale(0.5 / h)
            }
            (DerivativeMode::FiniteDifference(h), _) => {
                let p = self.eval_exact(t + h, 0)?;
                let c = self.eval_exact(t, 0)?;
                let m = self.eval_exact(t - h, 0)?;
                (&(&p - &c.scale(2.0)) + &m).scale(1.0 / (h * h))
            }
        };
        if out.rows() != self.n || out.cols() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "path `{}` produced a {}x{} matrix, expected {}x{}",
                self.label,
                out.rows(),
                out.cols(),
                self.n,
                self.n
            )));
        }
        if !out.is_finite() {
            return Err(Error::EvaluationFailure(format!("path `{}` not finite at t={t}", self.label)));
        }
        Ok(out)
    }

    fn eval_exact(&self, t: f64, order: usize) -> Result<Mat> {
        match &self.kind {
            PathKind::Constant(m) => Ok(if order == 0 { m.clone() } else { Mat::zeros(self.n, self.n) }),
            PathKind::Table(table) => {
                let vals = [t];
                let data = table.compiled[order]
                    .iter()
                    .map(|c| c.eval(&vals))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::EvaluationFailure(e.to_string()))?;
                Mat::from_vec(self.n, self.n, data)
            }
            PathKind::ExpFrame { s, a0 } => {
                let e = expm(&s.scale(t)).matmul(a0);
                Ok(match order {
                    0 => e,
                    1 => s.matmul(&e),
                    _ => s.matmul(s).matmul(&e),
                })
            }
            PathKind::Custom(f) => f(t, order),
        }
    }

    /// Checks `A(t + T) = A(t)` on 16 points within [`PERIODICITY_TOL`].
    pub fn check_periodic(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(Error::SchemaError(format!("period must be positive, got {}", self.period)));
        }
        for k in 0..16 {
            let t = self.period * k as f64 / 16.0;
            let a = self.eval(t, 0)?;
            let b = self.eval(t + self.period, 0)?;
            let gap = (&a - &b).max_abs();
            if gap > PERIODICITY_TOL * a.max_abs().max(1.0) {
                return Err(Error::HypothesisViolated(format!(
                    "path `{}` is not {}-periodic (gap {gap:.3e} at t={t})",
                    self.label, self.period
                )));
            }
        }
        Ok(())
    }

    pub fn default_tol(&self) -> f64 {
        match self.mode {
            DerivativeMode::Analytic => TOL_ANALYTIC,
            DerivativeMode::FiniteDifference(_) => TOL_FD,
        }
    }

    pub fn grid(&self, size: usize) -> Vec<f64> {
        (0..size).map(|k| self.period * k as f64 / size as f64).collect()
    }

    // -- named paths -------------------------------------------------------

    /// `[[cos t, -sin t], [sin t, cos t]]`
    pub fn rot2() -> MatrixPath {
        MatrixPath::from_strs(&[["cos(t)", "-sin(t)"], ["sin(t)", "cos(t)"]], 2.0 * PI)
            .expect("built-in path")
            .with_label("rot2")
    }

    /// `[[cos t, sin t], [-sin t, cos t]]`
    pub fn rot2cw() -> MatrixPath {
        MatrixPath::from_strs(&[["cos(t)", "sin(t)"], ["-sin(t)", "cos(t)"]], 2.0 * PI)
            .expect("built-in path")
            .with_label("rot2cw")
    }

    /// 4x4 orthogonal path whose left and right products are both constant but differ.
    pub fn counterexample4() -> MatrixPath {
        MatrixPath::from_strs(
            &[
                ["0", "0", "sin(t)", "-cos(t)"],
                ["0", "0", "cos(t)", "sin(t)"],
                ["cos(t)", "sin(t)", "0", "0"],
                ["-sin(t)", "cos(t)", "0", "0"],
            ],
            2.0 * PI,
        )
        .expect("built-in path")
        .with_label("counterexample4")
    }

    /// `e^{t S1} e^{t^2 S2}`: orthogonal, but neither one-sided product is constant
    /// when `S1`, `S2` are skew and `S2 != 0`.
    pub fn two_exp_frame(s1: Mat, s2: Mat, period: f64) -> MatrixPath {
        let n = s1.rows();
        let f = move |t: f64, order: usize| -> Result<Mat> {
            let e1 = expm(&s1.scale(t));
            let e2 = expm(&s2.scale(t * t));
            let a = e1.matmul(&e2);
            Ok(match order {
                0 => a,
                1 => &s1.matmul(&a) + &e1.matmul(&s2.scale(2.0 * t)).matmul(&e2),
                2 => {
                    let s2sq = s2.matmul(&s2);
                    let inner = &s2.scale(2.0) + &s2sq.scale(4.0 * t * t);
                    let x = s1.matmul(&s1).matmul(&a);
                    let y = s1.matmul(&e1).matmul(&s2.scale(4.0 * t)).matmul(&e2);
                    let z = e1.matmul(&inner).matmul(&e2);
                    &(&x + &y) + &z
                }
                k => return Err(Error::EvaluationFailure(format!("order {k}"))),
            })
        };
        MatrixPath::custom(n, period, "two_exp_frame", Arc::new(f))
    }

    /// Looks up `rot2`, `rot2cw`, `counterexample4`, `identity(n)` or
    /// `exp_frame(s11,s12;s21,s22)` (rows separated by `;`, period 2 pi).
    pub fn named(name: &str) -> Result<MatrixPath> {
        let name = name.trim();
        match name {
            "rot2" => return Ok(MatrixPath::rot2()),
            "rot2cw" => return Ok(MatrixPath::rot2cw()),
            "counterexample4" => return Ok(MatrixPath::counterexample4()),
            _ => {}
        }
        let inner = |prefix: &str| {
            name.strip_prefix(prefix).and_then(|r| r.strip_prefix('(')).and_then(|r| r.strip_suffix(')'))
        };
        if let Some(arg) = inner("identity") {
            let n: usize = arg.trim().parse().map_err(|_| Error::UnknownIdentifier(name.to_string()))?;
            return Ok(MatrixPath::identity(n, 2.0 * PI).with_label(name));
        }
        if let Some(arg) = inner("exp_frame") {
            let rows = arg
                .split(';')
                .map(|r| {
                    r.split(',')
                        .map(|e| parse_expr(e.trim())?.eval_with(&|_| None))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(Error::SchemaError(format!("exp_frame needs a square matrix: {name}")));
            }
            let s = Mat::from_rows(&rows);
            return Ok(MatrixPath::exp_frame(s, Mat::identity(n), 2.0 * PI).with_label(name));
        }
        Err(Error::UnknownIdentifier(name.to_string()))
    }
}

/// `-B(t)^{-1} B'(t) B(t)^{-1}`, the derivative of `t -> B(t)^{-1}`.
pub fn inverse_derivative(b: &MatrixPath, t: f64) -> Result<Mat> {
    let binv = b.eval(t, 0)?.inverse()?;
    let db = b.eval(t, 1)?;
    Ok(binv.matmul(&db).matmul(&binv).scale(-1.0))
}

// ---------------------------------------------------------------------------
// Audits
// ---------------------------------------------------------------------------

/// Grid audit of orthogonality and of the constancy of `A A'^T` and `A^T A'`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAudit {
    pub grid: usize,
    pub tol: f64,
    /// max `||A A^T - I||`
    pub orthogonality_residual: f64,
    /// mean of `A A'^T`
    pub m: Mat,
    /// max `||A A'^T - m||`
    pub right_product_residual: f64,
    /// mean of `A^T A'`
    pub k: Mat,
    /// max `||A^T A' - k||`
    pub left_product_residual: f64,
    /// `||m + m^T||`
    pub skewness_residual: f64,
    /// max `||A^T A' - A A'^T||`
    pub product_gap: f64,
    /// mean of `A A''^T`
    pub second_product: Mat,
    /// max `||A A''^T - second_product||`
    pub second_product_residual: f64,
    pub orthogonal: bool,
    pub right_constant: bool,
    pub left_constant: bool,
}

impl FrameAudit {
    /// Orthogonal with constant right product.
    pub fn holds(&self) -> bool {
        self.orthogonal && self.right_constant
    }
}

struct Sample {
    a: Mat,
    da: Mat,
    dda: Mat,
}

fn sample(path: &MatrixPath, grid: usize) -> Result<Vec<Sample>> {
    path.grid(grid)
        .into_iter()
        .map(|t| Ok(Sample { a: path.eval(t, 0)?, da: path.eval(t, 1)?, dda: path.eval(t, 2)? }))
        .collect()
}

fn max_dev(mats: &[Mat], mean: &Mat) -> f64 {
    mats.iter().map(|x| (x - mean).norm_inf()).fold(0.0, f64::max)
}

pub fn frame_audit(path: &MatrixPath, grid: usize, tol: f64) -> Result<FrameAudit> {
    if grid < 8 {
        return Err(Error::SchemaError(format!("audit grid must have at least 8 points, got {grid}")));
    }
    let samples = sample(path, grid)?;
    let id = Mat::identity(path.n());
    let mut orth = 0.0f64;
    let mut gap = 0.0f64;
    let mut rights = Vec::with_capacity(grid);
    let mut lefts = Vec::with_capacity(grid);
    let mut seconds = Vec::with_capacity(grid);
    for s in &samples {
        orth = orth.max((&s.a.matmul(&s.a.transpose()) - &id).norm_inf());
        let r = s.a.matmul(&s.da.transpose());
        let l = s.a.transpose().matmul(&s.da);
        gap = gap.max((&l - &r).norm_inf());
        rights.push(r);
        lefts.push(l);
        seconds.push(s.a.matmul(&s.dda.transpose()));
    }
    let m = Mat::mean(&rights);
    let k = Mat::mean(&lefts);
    let second = Mat::mean(&seconds);
    let right_res = max_dev(&rights, &m);
    let left_res = max_dev(&lefts, &k);
    Ok(FrameAudit {
        grid,
        tol,
        orthogonality_residual: orth,
        skewness_residual: (&m + &m.transpose()).norm_inf(),
        right_product_residual: right_res,
        left_product_residual: left_res,
        product_gap: gap,
        second_product_residual: max_dev(&seconds, &second),
        m,
        k,
        second_product: second,
        orthogonal: orth <= tol,
        right_constant: right_res <= tol,
        left_constant: left_res <= tol,
    })
}

/// [`frame_audit`] with the default grid and the tolerance for the path's derivative mode.
pub fn frame_audit_default(path: &MatrixPath) -> Result<FrameAudit> {
    frame_audit(path, DEFAULT_GRID, path.default_tol())
}

/// Residuals of the matrix identities satisfied by orthogonal paths with constant
/// one-sided products, each the max over the grid (infinity norm).
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub grid: usize,
    /// `A''A^T - A A''^T`
    pub lemma1_symmetry: f64,
    /// `A''A^T + A'A'^T`
    pub lemma1_second: f64,
    /// `A'A'^T + (A A'^T)^2`
    pub lemma2: f64,
    /// `A''A^T - M^2`
    pub prop1: f64,
    /// `A''^T A + A'^T A'`
    pub rem44_a: f64,
    /// `A'^T A' + (A^T A')^2`
    pub rem44_b: f64,
    /// `A''^T A - (A^T A')^2`
    pub rem44_c: f64,
    /// constancy residuals of the right and left products
    pub prop2_equivalence: (f64, f64),
    pub preconditions_hold: bool,
}

impl LemmaReport {
    /// Largest of the identity residuals (excluding the constancy pair).
    pub fn max_identity_residual(&self) -> f64 {
        [self.lemma1_symmetry, self.lemma1_second, self.lemma2, self.prop1, self.rem44_a, self.rem44_b, self.rem44_c]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Evaluates every identity on the grid. With `strict`, failing preconditions
/// (orthogonality and right-product constancy within `tol`) is an error.
pub fn lemma_audit(path: &MatrixPath, grid: usize, tol: f64, strict: bool) -> Result<LemmaReport> {
    let audit = frame_audit(path, grid, tol)?;
    let pre = audit.holds();
    if strict && !pre {
        return Err(Error::HypothesisViolated(format!(
            "path `{}`: orthogonality residual {:.3e}, right-product residual {:.3e} (tol {tol:.1e})",
            path.label(),
            audit.orthogonality_residual,
            audit.right_product_residual
        )));
    }
    let m2 = audit.m.matmul(&audit.m);
    let mut r = LemmaReport {
        grid,
        lemma1_symmetry: 0.0,
        lemma1_second: 0.0,
        lemma2: 0.0,
        prop1: 0.0,
        rem44_a: 0.0,
        rem44_b: 0.0,
        rem44_c: 0.0,
        prop2_equivalence: (audit.right_product_residual, audit.left_product_residual),
        preconditions_hold: pre,
    };
    for s in sample(path, grid)? {
        let (a, da, dda) = (&s.a, &s.da, &s.dda);
        let at = a.transpose();
        let dat = da.transpose();
        let ddat = dda.transpose();
        let dda_at = dda.matmul(&at);
        let da_dat = da.matmul(&dat);
        let right = a.matmul(&dat);
        let left = at.matmul(da);
        let ddat_a = ddat.matmul(a);
        let dat_da = dat.matmul(da);
        let upd = |slot: &mut f64, m: Mat| *slot = slot.max(m.norm_inf());
        upd(&mut r.lemma1_symmetry, &dda_at - &a.matmul(&ddat));
        upd(&mut r.lemma1_second, &dda_at + &da_dat);
        upd(&mut r.lemma2, &da_dat + &right.matmul(&right));
        upd(&mut r.prop1, &dda_at - &m2);
        upd(&mut r.rem44_a, &ddat_a + &dat_da);
        upd(&mut r.rem44_b, &dat_da + &left.matmul(&left));
        upd(&mut r.rem44_c, &ddat_a - &left.matmul(&left));
    }
    Ok(r)
}

/// Random skew-symmetric `n x n` matrix with entries in `[-scale, scale]`.
pub fn random_skew<R: rand::Rng>(rng: &mut R, n: usize, scale: f64) -> Mat {
    let mut s = Mat::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.gen_range(-scale..=scale);
            s[(i, j)] = v;
            s[(j, i)] = -v;
        }
    }
    s
}

/// Random orthogonal matrix as the exponential of a random skew matrix, optionally
/// composed with a reflection.
pub fn random_orthogonal<R: rand::Rng>(rng: &mut R, n: usize) -> Mat {
    let mut q = expm(&random_skew(rng, n, PI));
    if rng.gen_bool(0.5) {
        for i in 0..n {
            q[(i, 0)] = -q[(i, 0)];
        }
    }
    q
}
