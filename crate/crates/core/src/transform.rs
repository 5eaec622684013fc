//! Problem model for moving-constraint DAEs and the change of variables
//! `xi = A(t) x`, `eta = B(t) y` that makes the constraint autonomous.

use std::fmt;
use std::sync::Arc;

use crate::densela::{fd_jacobian, Lu, Mat};
use crate::error::{Error, Result};
use crate::matpath::{frame_audit, inverse_derivative, FrameAudit, MatrixPath, DEFAULT_GRID};

/// Commutation tolerance for drift matrices against the frame.
pub const COMMUTATION_TOL: f64 = 1e-8;

/// First-order forcing `f(t, x, y)`.
pub type Forcing1 = Arc<dyn Fn(f64, &[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync>;
/// Second-order forcing `f(t, x, y, x', y')`.
pub type Forcing2 = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// Autonomous constraint `g(p, q)` with `p` in R^m and `q`, `g` in R^s.
pub trait Constraint: Send + Sync {
    fn m(&self) -> usize;
    fn s(&self) -> usize;
    fn eval(&self, p: &[f64], q: &[f64]) -> Result<Vec<f64>>;

    fn jac_p(&self, p: &[f64], q: &[f64]) -> Result<Mat> {
        let gq = self.eval(p, q)?;
        fd_jacobian(&|pp: &[f64]| self.eval(pp, q), p, &gq)
    }

    fn jac_q(&self, p: &[f64], q: &[f64]) -> Result<Mat> {
        let gq = self.eval(p, q)?;
        fd_jacobian(&|qq: &[f64]| self.eval(p, qq), q, &gq)
    }
}

type ConstraintFn = Arc<dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// Closure-backed constraint with finite-difference Jacobians.
pub struct FnConstraint {
    m: usize,
    s: usize,
    f: ConstraintFn,
}

impl FnConstraint {
    pub fn new(m: usize, s: usize, f: ConstraintFn) -> FnConstraint {
        FnConstraint { m, s, f }
    }
}

impl Constraint for FnConstraint {
    fn m(&self) -> usize {
        self.m
    }
    fn s(&self) -> usize {
        self.s
    }
    fn eval(&self, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        (self.f)(p, q)
    }
}

/// `x' = H x + lambda f(t, x, y)`, `g(A(t) x, B(t) y) = 0`.
#[derive(Clone)]
pub struct DaeProblem1 {
    pub name: String,
    pub period: f64,
    pub m: usize,
    pub s: usize,
    pub f: Forcing1,
    pub g: Arc<dyn Constraint>,
    pub a: MatrixPath,
    pub b: MatrixPath,
    pub h: Option<Mat>,
}

/// `x'' = H1 x' + H2 x + lambda f(t, x, y, x', y')`, `g(A(t) x, B(t) y) = 0`.
#[derive(Clone)]
pub struct DaeProblem2 {
    pub name: String,
    pub period: f64,
    pub m: usize,
    pub s: usize,
    pub f: Forcing2,
    pub g: Arc<dyn Constraint>,
    pub a: MatrixPath,
    pub b: MatrixPath,
    pub h1: Option<Mat>,
    pub h2: Option<Mat>,
}

impl fmt::Debug for DaeProblem1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DaeProblem1({}, m={}, s={}, T={})", self.name, self.m, self.s, self.period)
    }
}

impl fmt::Debug for DaeProblem2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DaeProblem2({}, m={}, s={}, T={})", self.name, self.m, self.s, self.period)
    }
}

/// Either problem class.
#[derive(Clone, Debug)]
pub enum DaeProblem {
    First(DaeProblem1),
    Second(DaeProblem2),
}

fn check_shapes(
    m: usize,
    s: usize,
    period: f64,
    g: &dyn Constraint,
    a: &MatrixPath,
    b: &MatrixPath,
    drifts: &[&Option<Mat>],
) -> Result<()> {
    if m == 0 || s == 0 {
        return Err(Error::DimensionMismatch("m and s must be positive".into()));
    }
    if !(period > 0.0) {
        return Err(Error::SchemaError(format!("period must be positive, got {period}")));
    }
    if g.m() != m || g.s() != s {
        return Err(Error::DimensionMismatch(format!("constraint is {}x{}, problem is m={m}, s={s}", g.m(), g.s())));
    }
    if a.n() != m || b.n() != s {
        return Err(Error::DimensionMismatch(format!("A is {}x{}, B is {}x{}", a.n(), a.n(), b.n(), b.n())));
    }
    for h in drifts.iter().filter_map(|h| h.as_ref()) {
        if h.rows() != m || h.cols() != m {
            return Err(Error::DimensionMismatch(format!("drift matrix must be {m}x{m}")));
        }
    }
    a.check_periodic()?;
    b.check_periodic()
}

impl DaeProblem1 {
    /// Shape and periodicity checks.
    pub fn validate(&self) -> Result<()> {
        check_shapes(self.m, self.s, self.period, self.g.as_ref(), &self.a, &self.b, &[&self.h])
    }
}

impl DaeProblem2 {
    pub fn validate(&self) -> Result<()> {
        check_shapes(self.m, self.s, self.period, self.g.as_ref(), &self.a, &self.b, &[&self.h1, &self.h2])
    }
}

impl DaeProblem {
    pub fn name(&self) -> &str {
        match self {
            DaeProblem::First(p) => &p.name,
            DaeProblem::Second(p) => &p.name,
        }
    }

    pub fn order(&self) -> usize {
        match self {
            DaeProblem::First(_) => 1,
            DaeProblem::Second(_) => 2,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            DaeProblem::First(p) => (p.m, p.s),
            DaeProblem::Second(p) => (p.m, p.s),
        }
    }

    pub fn period(&self) -> f64 {
        match self {
            DaeProblem::First(p) => p.period,
            DaeProblem::Second(p) => p.period,
        }
    }

    pub fn a(&self) -> &MatrixPath {
        match self {
            DaeProblem::First(p) => &p.a,
            DaeProblem::Second(p) => &p.a,
        }
    }

    pub fn b(&self) -> &MatrixPath {
        match self {
            DaeProblem::First(p) => &p.b,
            DaeProblem::Second(p) => &p.b,
        }
    }

    pub fn g(&self) -> &Arc<dyn Constraint> {
        match self {
            DaeProblem::First(p) => &p.g,
            DaeProblem::Second(p) => &p.g,
        }
    }

    pub fn has_drift(&self) -> bool {
        match self {
            DaeProblem::First(p) => p.h.is_some(),
            DaeProblem::Second(p) => p.h1.is_some() || p.h2.is_some(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DaeProblem::First(p) => p.validate(),
            DaeProblem::Second(p) => p.validate(),
        }
    }

    pub fn transform(&self) -> Result<TransformedSystem> {
        match self {
            DaeProblem::First(p) => fixed_frame_first(p),
            DaeProblem::Second(p) => fixed_frame_second(p),
        }
    }

    /// Raw-mode forcing evaluated with zero velocities for first-order problems.
    pub fn forcing(&self, t: f64, x: &[f64], y: &[f64], dx: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
        let out = match self {
            DaeProblem::First(p) => (p.f)(t, x, y)?,
            DaeProblem::Second(p) => (p.f)(t, x, y, dx, dy)?,
        };
        let (m, _) = self.dims();
        if out.len() != m {
            return Err(Error::DimensionMismatch(format!("forcing returned {} components, expected {m}", out.len())));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Transformed system
// ---------------------------------------------------------------------------

/// The system in fixed-frame coordinates.
///
/// Order 1: `xi' = D0 xi + lambda F(t, xi, eta)`, order 2:
/// `xi'' = D0 xi + D1 xi' + lambda F(t, xi, eta, xi', eta')`, both with `g(xi, eta) = 0`.
#[derive(Clone)]
pub struct TransformedSystem {
    pub order: usize,
    pub m: usize,
    pub s: usize,
    pub period: f64,
    pub audit: FrameAudit,
    /// Constant drift on `xi` (the nominal one when `exact_drift` is set).
    pub d0: Mat,
    /// Constant drift on `xi'` (order 2 only).
    pub d1: Option<Mat>,
    /// max over the grid of `||H A - A H||` across all supplied drift matrices
    pub commutation_residual: f64,
    /// Drift matrices do not commute with `A`; the integrator uses the exact
    /// time-dependent drifts instead of `d0`, `d1`.
    pub exact_drift: bool,
    pub problem: DaeProblem,
}

impl fmt::Debug for TransformedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransformedSystem")
            .field("order", &self.order)
            .field("m", &self.m)
            .field("s", &self.s)
            .field("d0", &self.d0)
            .field("d1", &self.d1)
            .field("commutation_residual", &self.commutation_residual)
            .field("exact_drift", &self.exact_drift)
            .finish()
    }
}

fn require_frame(audit: &FrameAudit, label: &str) -> Result<()> {
    if !audit.orthogonal {
        return Err(Error::HypothesisViolated(format!(
            "frame `{label}` is not orthogonal (residual {:.3e})",
            audit.orthogonality_residual
        )));
    }
    if !audit.right_constant {
        return Err(Error::HypothesisViolated(format!(
            "A A'^T is not constant along `{label}` (residual {:.3e})",
            audit.right_product_residual
        )));
    }
    Ok(())
}

fn commutation_residual(a: &MatrixPath, hs: &[&Mat]) -> Result<f64> {
    let mut worst = 0.0f64;
    if hs.is_empty() {
        return Ok(0.0);
    }
    for t in a.grid(DEFAULT_GRID) {
        let at = a.eval(t, 0)?;
        for h in hs {
            worst = worst.max((&h.matmul(&at) - &at.matmul(h)).norm_inf());
        }
    }
    Ok(worst)
}

pub fn fixed_frame_first(prob: &DaeProblem1) -> Result<TransformedSystem> {
    prob.validate()?;
    let audit = frame_audit(&prob.a, DEFAULT_GRID, prob.a.default_tol())?;
    require_frame(&audit, prob.a.label())?;
    let h = prob.h.clone().unwrap_or_else(|| Mat::zeros(prob.m, prob.m));
    let comm = commutation_residual(&prob.a, &prob.h.iter().collect::<Vec<_>>())?;
    if comm > COMMUTATION_TOL {
        log::warn!(
            "drift H does not commute with A (residual {comm:.3e}); using the time-dependent drift A H A^T - A A'^T"
        );
    }
    Ok(TransformedSystem {
        order: 1,
        m: prob.m,
        s: prob.s,
        period: prob.period,
        d0: &h - &audit.m,
        d1: None,
        audit,
        commutation_residual: comm,
        exact_drift: comm > COMMUTATION_TOL,
        problem: DaeProblem::First(prob.clone()),
    })
}

pub fn fixed_frame_second(prob: &DaeProblem2) -> Result<TransformedSystem> {
    prob.validate()?;
    let audit = frame_audit(&prob.a, DEFAULT_GRID, prob.a.default_tol())?;
    require_frame(&audit, prob.a.label())?;
    let zero = Mat::zeros(prob.m, prob.m);
    let h1 = prob.h1.clone().unwrap_or_else(|| zero.clone());
    let h2 = prob.h2.clone().unwrap_or_else(|| zero.clone());
    let hs: Vec<&Mat> = prob.h1.iter().chain(prob.h2.iter()).collect();
    let comm = commutation_residual(&prob.a, &hs)?;
    if comm > COMMUTATION_TOL {
        log::warn!("drift matrices do not commute with A (residual {comm:.3e}); using time-dependent drifts");
    }
    let m = &audit.m;
    let m2 = m.matmul(m);
    let d0 = &(&h1.matmul(m) + &h2) - &m2;
    let d1 = &h1 - &m.scale(2.0);
    Ok(TransformedSystem {
        order: 2,
        m: prob.m,
        s: prob.s,
        period: prob.period,
        d0,
        d1: Some(d1),
        audit,
        commutation_residual: comm,
        exact_drift: comm > COMMUTATION_TOL,
        problem: DaeProblem::Second(prob.clone()),
    })
}

/// Solves `B x = v` by LU.
fn binv_apply(b: &MatrixPath, t: f64, v: &[f64]) -> Result<Vec<f64>> {
    Ok(Lu::factor(&b.eval(t, 0)?)?.solve(v))
}

impl TransformedSystem {
    pub fn g(&self) -> &Arc<dyn Constraint> {
        self.problem.g()
    }

    pub fn a(&self) -> &MatrixPath {
        self.problem.a()
    }

    pub fn b(&self) -> &MatrixPath {
        self.problem.b()
    }

    /// Drift on `xi` at time `t`: constant `d0`, or `A H A^T + A' A^T` (order 1) /
    /// `A H1 A'^T + A H2 A^T - A A''^T` (order 2) when the drifts do not commute.
    pub fn drift0(&self, t: f64) -> Result<Mat> {
        if !self.exact_drift {
            return Ok(self.d0.clone());
        }
        let a = self.a().eval(t, 0)?;
        let at = a.transpose();
        match &self.problem {
            DaeProblem::First(p) => {
                let da = self.a().eval(t, 1)?;
                let h = p.h.clone().unwrap_or_else(|| Mat::zeros(p.m, p.m));
                Ok(&a.matmul(&h).matmul(&at) + &da.matmul(&at))
            }
            DaeProblem::Second(p) => {
                let da = self.a().eval(t, 1)?;
                let dda = self.a().eval(t, 2)?;
                let zero = Mat::zeros(p.m, p.m);
                let h1 = p.h1.as_ref().unwrap_or(&zero);
                let h2 = p.h2.as_ref().unwrap_or(&zero);
                let x = a.matmul(h1).matmul(&da.transpose());
                let y = a.matmul(h2).matmul(&at);
                Ok(&(&x + &y) - &a.matmul(&dda.transpose()))
            }
        }
    }

    /// Drift on `xi'` (order 2): constant `d1`, or `A H1 A^T - 2 A A'^T`.
    pub fn drift1(&self, t: f64) -> Result<Mat> {
        let d1 = self.d1.clone().ok_or_else(|| Error::DimensionMismatch("drift1 of a first-order system".into()))?;
        if !self.exact_drift {
            return Ok(d1);
        }
        let DaeProblem::Second(p) = &self.problem else { unreachable!() };
        let a = self.a().eval(t, 0)?;
        let da = self.a().eval(t, 1)?;
        let zero = Mat::zeros(p.m, p.m);
        let h1 = p.h1.as_ref().unwrap_or(&zero);
        Ok(&a.matmul(h1).matmul(&a.transpose()) - &a.matmul(&da.transpose()).scale(2.0))
    }

    /// `F(t, xi, eta)` (order 1) or `F(t, xi, eta, u, v)` with `u = xi'`, `v = eta'`.
    pub fn forcing(&self, t: f64, xi: &[f64], eta: &[f64], u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let a = self.a().eval(t, 0)?;
        let at = a.transpose();
        let x = at.mul_vec(xi);
        let y = binv_apply(self.b(), t, eta)?;
        let fx = match &self.problem {
            DaeProblem::First(p) => (p.f)(t, &x, &y)?,
            DaeProblem::Second(p) => {
                let da = self.a().eval(t, 1)?;
                let dx: Vec<f64> =
                    at.mul_vec(u).iter().zip(da.transpose().mul_vec(xi)).map(|(a, b)| a + b).collect();
                let dbinv = inverse_derivative(self.b(), t)?;
                let dy: Vec<f64> =
                    dbinv.mul_vec(eta).iter().zip(binv_apply(self.b(), t, v)?).map(|(a, b)| a + b).collect();
                (p.f)(t, &x, &y, &dx, &dy)?
            }
        };
        if fx.len() != self.m {
            return Err(Error::DimensionMismatch(format!("forcing returned {} components, expected {}", fx.len(), self.m)));
        }
        Ok(a.mul_vec(&fx))
    }

    /// `(x, y) = (A(t)^T xi, B(t)^{-1} eta)`.
    pub fn back_map(&self, t: f64, xi: &[f64], eta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        pull_back_point(self.a(), self.b(), t, xi, eta)
    }
}

/// Pointwise inverse of the change of variables.
pub fn pull_back_point(a: &MatrixPath, b: &MatrixPath, t: f64, xi: &[f64], eta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = a.eval(t, 0)?.transpose().mul_vec(xi);
    let y = binv_apply(b, t, eta)?;
    Ok((x, y))
}

/// Pointwise change of variables.
pub fn push_forward_point(a: &MatrixPath, b: &MatrixPath, t: f64, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((a.eval(t, 0)?.mul_vec(x), b.eval(t, 0)?.mul_vec(y)))
}

/// Sampled trajectory: times and node values.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    /// differential block per node (`x` or `xi`)
    pub x: Vec<Vec<f64>>,
    /// algebraic block per node (`y` or `eta`)
    pub y: Vec<Vec<f64>>,
    /// first derivatives of the differential block (order 2 only)
    pub dx: Option<Vec<Vec<f64>>>,
    /// first derivatives of the algebraic block (order 2 only)
    pub dy: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Sup-norm distance between two trajectories on the same grid, over all stored blocks.
    pub fn sup_distance(&self, other: &Trajectory) -> f64 {
        let blocks = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            a.iter()
                .zip(b)
                .flat_map(|(u, v)| u.iter().zip(v).map(|(p, q)| (p - q).abs()))
                .fold(0.0, f64::max)
        };
        let mut d = blocks(&self.x, &other.x).max(blocks(&self.y, &other.y));
        if let (Some(a), Some(b)) = (&self.dx, &other.dx) {
            d = d.max(blocks(a, b));
        }
        if let (Some(a), Some(b)) = (&self.dy, &other.dy) {
            d = d.max(blocks(a, b));
        }
        d
    }
}

/// Maps a fixed-frame trajectory back to original coordinates, including velocities
/// when present: `x' = A^T xi' + A'^T xi`, `y' = (B^{-1})' eta + B^{-1} eta'`.
pub fn pull_back(traj: &Trajectory, a: &MatrixPath, b: &MatrixPath) -> Result<Trajectory> {
    let mut out = Trajectory { t: traj.t.clone(), x: vec![], y: vec![], dx: None, dy: None };
    let mut dxs = Vec::new();
    let mut dys = Vec::new();
    for (k, &t) in traj.t.iter().enumerate() {
        let (x, y) = pull_back_point(a, b, t, &traj.x[k], &traj.y[k])?;
        out.x.push(x);
        out.y.push(y);
        if let (Some(u), Some(v)) = (&traj.dx, &traj.dy) {
            let at = a.eval(t, 0)?.transpose();
            let dat = a.eval(t, 1)?.transpose();
            let dx: Vec<f64> = at.mul_vec(&u[k]).iter().zip(dat.mul_vec(&traj.x[k])).map(|(p, q)| p + q).collect();
            let dbinv = inverse_derivative(b, t)?;
            let dy: Vec<f64> =
                dbinv.mul_vec(&traj.y[k]).iter().zip(binv_apply(b, t, &v[k])?).map(|(p, q)| p + q).collect();
            dxs.push(dx);
            dys.push(dy);
        }
    }
    if traj.dx.is_some() && traj.dy.is_some() {
        out.dx = Some(dxs);
        out.dy = Some(dys);
    }
    Ok(out)
}

/// Forward change of variables on a sampled trajectory (positions only).
pub fn push_forward(traj: &Trajectory, a: &MatrixPath, b: &MatrixPath) -> Result<Trajectory> {
    let mut out = Trajectory { t: traj.t.clone(), x: vec![], y: vec![], dx: None, dy: None };
    for (k, &t) in traj.t.iter().enumerate() {
        let (xi, eta) = push_forward_point(a, b, t, &traj.x[k], &traj.y[k])?;
        out.x.push(xi);
        out.y.push(eta);
    }
    Ok(out)
}

/// Drifts `(H1, H2) = (-2 K1, -K1^2)` for `d^2/dt^2 (C x) = lambda f`, where
/// `K1 = C^T C'` is the audited (constant) left product of the orthogonal frame `C`.
pub fn c_frame_drifts(c: &MatrixPath) -> Result<(Mat, Mat)> {
    let audit = frame_audit(c, DEFAULT_GRID, c.default_tol())?;
    if !audit.orthogonal || !audit.left_constant {
        return Err(Error::HypothesisViolated(format!(
            "C must be orthogonal with constant C^T C' (residuals {:.3e}, {:.3e})",
            audit.orthogonality_residual, audit.left_product_residual
        )));
    }
    let k1 = audit.k;
    Ok((k1.scale(-2.0), k1.matmul(&k1).scale(-1.0)))
}
