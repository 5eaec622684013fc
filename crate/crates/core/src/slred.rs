//! Reduction of separated-variables semi-linear DAEs `E x' = F(t) x + lambda C(t) S(x)`
//! with `rank E = n/2` to the moving-constraint form, plus a direct Radau IIA
//! integrator for the unreduced system.

use std::fmt;

use crate::densela::{newton_solve_fd, norm_inf, svd_small, Mat, NewtonConfig, Svd};
use crate::error::{Error, Result};
use crate::matpath::{frame_audit, MatrixPath, DEFAULT_GRID};
use crate::probfile::expr::{add, linear_combination, mul, Compiled, Expr};
use crate::probfile::{ExprMatrix, Kind, Problem, ProblemSpec};
use crate::transform::{DaeProblem, DaeProblem1};

/// Relative threshold for the numerical rank of `E`.
pub const RANK_TOL: f64 = 1e-10;
/// Residual bound for the block and subspace conditions.
pub const CONDITION_TOL: f64 = 1e-8;
/// Smallest `|det|` accepted for the constraint blocks.
pub const BLOCK_DET_TOL: f64 = 1e-10;
/// Coefficients below this magnitude are dropped when forming reduced expressions.
const COEF_CUTOFF: f64 = 1e-15;

/// `E x' = F(t) x + lambda C(t) S(x)`.
#[derive(Clone)]
pub struct SemiLinearDae {
    pub name: String,
    pub n: usize,
    pub period: f64,
    pub e: Mat,
    pub f_exprs: ExprMatrix,
    pub c_exprs: ExprMatrix,
    pub s_exprs: Vec<Expr>,
    pub fpath: MatrixPath,
    pub cpath: MatrixPath,
    s_compiled: Vec<Compiled>,
    fd_derivatives: bool,
}

impl fmt::Debug for SemiLinearDae {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SemiLinearDae({}, n={}, T={})", self.name, self.n, self.period)
    }
}

fn x_slot(n: usize) -> impl Fn(&str) -> Option<usize> {
    move |name: &str| {
        if n == 1 && name == "x" {
            return Some(0);
        }
        let i: usize = name.strip_prefix('x')?.parse().ok()?;
        (1..=n).contains(&i).then(|| i - 1)
    }
}

impl SemiLinearDae {
    pub fn new(
        name: &str,
        e: Mat,
        f_exprs: ExprMatrix,
        c_exprs: ExprMatrix,
        s_exprs: Vec<Expr>,
        period: f64,
        fd_derivatives: bool,
    ) -> Result<SemiLinearDae> {
        let n = e.rows();
        if !e.is_square() || s_exprs.len() != n || f_exprs.len() != n || c_exprs.len() != n {
            return Err(Error::DimensionMismatch(format!("semi-linear blocks must all be {n}x{n}")));
        }
        let mk = |rows: &ExprMatrix, label: &str| -> Result<MatrixPath> {
            let p = MatrixPath::from_exprs(rows, period, None, None)?.with_label(label);
            p.check_periodic()?;
            Ok(if fd_derivatives { p.with_fd(None) } else { p })
        };
        let fpath = mk(&f_exprs, "F")?;
        let cpath = mk(&c_exprs, "C")?;
        let resolve = x_slot(n);
        let s_compiled = s_exprs.iter().map(|e| Compiled::new(e, &resolve)).collect::<Result<Vec<_>>>()?;
        Ok(SemiLinearDae {
            name: name.to_string(),
            n,
            period,
            e,
            f_exprs,
            c_exprs,
            s_exprs,
            fpath,
            cpath,
            s_compiled,
            fd_derivatives,
        })
    }

    pub fn s_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.s_compiled.iter().map(|c| c.eval(x)).collect()
    }

    /// `F(t) x + lambda C(t) S(x)`
    pub fn rhs(&self, t: f64, lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
        let fx = self.fpath.eval(t, 0)?.mul_vec(x);
        let cs = self.cpath.eval(t, 0)?.mul_vec(&self.s_map(x)?);
        Ok(fx.iter().zip(&cs).map(|(a, b)| a + lambda * b).collect())
    }

    /// Copy with `E` scaled by `c`.
    pub fn with_scaled_e(&self, c: f64) -> SemiLinearDae {
        let mut out = self.clone();
        out.e = self.e.scale(c);
        out
    }
}

/// Block and subspace diagnostics of the SVD-based reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    pub n: usize,
    pub r: usize,
    pub grid: usize,
    pub p: Mat,
    pub sigma: Vec<f64>,
    pub q: Mat,
    /// top-left block of `P^T E Q`
    pub e1: Mat,
    /// max entry of `P^T E Q` outside the top-left block
    pub e_block_residual: f64,
    /// max over the grid of the top rows of `P^T F(t) Q`
    pub f_top_residual: f64,
    /// max over the grid of the bottom rows of `P^T C(t) Q`
    pub c_bottom_residual: f64,
    /// sine of the largest principal angle between `ker C(t)^T` and `ker E^T`
    pub kernel_c_residual: f64,
    /// sine of the largest principal angle between `im F(t)` and `ker E^T`
    pub image_f_residual: f64,
    /// min over the grid of `|det F3(t)|`
    pub f3_min_det: f64,
    /// min over the grid of `|det F4(t)|`
    pub f4_min_det: f64,
    pub conditions_hold: bool,
}

/// Sine of the largest principal angle between the column spans of orthonormal
/// `x` and `y` (`n x k` each); 1 when the dimensions differ.
pub fn subspace_gap(x: &Mat, y: &Mat) -> Result<f64> {
    if x.cols() != y.cols() {
        return Ok(1.0);
    }
    let n = x.rows();
    if x.cols() == 0 {
        return Ok(0.0);
    }
    let proj = &Mat::identity(n) - &x.matmul(&x.transpose());
    let resid = proj.matmul(y);
    let mut square = Mat::zeros(n, n);
    square.set_block(0, 0, &resid);
    Ok(svd_small(&square)?.sigma[0])
}

fn columns(m: &Mat, range: std::ops::Range<usize>) -> Mat {
    m.block(0, range.start, m.rows(), range.len())
}

fn numerical_rank(svd: &Svd) -> usize {
    svd.rank(RANK_TOL)
}

/// Blocks `(top-left, top-right, bottom-left, bottom-right)` of an `n x n` matrix split at `r`.
fn split(m: &Mat, r: usize) -> (Mat, Mat, Mat, Mat) {
    let n = m.rows();
    (m.block(0, 0, r, r), m.block(0, r, r, n - r), m.block(r, 0, n - r, r), m.block(r, r, n - r, n - r))
}

pub fn check_conditions(dae: &SemiLinearDae, grid: usize) -> Result<ReductionReport> {
    let n = dae.n;
    if n % 2 != 0 {
        return Err(Error::RankMismatch { rank: numerical_rank(&svd_small(&dae.e)?), expected: n / 2 });
    }
    let svd = svd_small(&dae.e)?;
    let r = n / 2;
    let rank = numerical_rank(&svd);
    if rank != r {
        return Err(Error::RankMismatch { rank, expected: r });
    }
    let (p, q) = (&svd.p, &svd.q);
    let pt = p.transpose();
    let ker_et = columns(p, r..n);

    let e_t = pt.matmul(&dae.e).matmul(q);
    let (e1, e2, e3, e4) = split(&e_t, r);
    let e_block_residual = [e2.max_abs(), e3.max_abs(), e4.max_abs()].into_iter().fold(0.0, f64::max);

    let mut f_top = 0.0f64;
    let mut c_bottom = 0.0f64;
    let mut kernel_c = 0.0f64;
    let mut image_f = 0.0f64;
    let mut f3_min = f64::INFINITY;
    let mut f4_min = f64::INFINITY;
    for t in dae.fpath.grid(grid) {
        let f = dae.fpath.eval(t, 0)?;
        let c = dae.cpath.eval(t, 0)?;
        let ft = pt.matmul(&f).matmul(q);
        let ct = pt.matmul(&c).matmul(q);
        let (f1, f2, f3, f4) = split(&ft, r);
        let (_, _, c3, c4) = split(&ct, r);
        f_top = f_top.max(f1.max_abs()).max(f2.max_abs());
        c_bottom = c_bottom.max(c3.max_abs()).max(c4.max_abs());
        f3_min = f3_min.min(f3.det().abs());
        f4_min = f4_min.min(f4.det().abs());

        // ker C^T = left singular vectors of C with zero singular values
        let sc = svd_small(&c)?;
        let rc = numerical_rank(&sc);
        kernel_c = kernel_c.max(subspace_gap(&ker_et, &columns(&sc.p, rc..n))?);
        // im F = left singular vectors of F with nonzero singular values
        let sf = svd_small(&f)?;
        let rf = numerical_rank(&sf);
        image_f = image_f.max(subspace_gap(&ker_et, &columns(&sf.p, 0..rf))?);
    }
    let conditions_hold = [e_block_residual, f_top, c_bottom, kernel_c, image_f].iter().all(|&x| x <= CONDITION_TOL);
    Ok(ReductionReport {
        n,
        r,
        grid,
        p: p.clone(),
        sigma: svd.sigma.clone(),
        q: q.clone(),
        e1,
        e_block_residual,
        f_top_residual: f_top,
        c_bottom_residual: c_bottom,
        kernel_c_residual: kernel_c,
        image_f_residual: image_f,
        f3_min_det: f3_min,
        f4_min_det: f4_min,
        conditions_hold,
    })
}

/// Output of [`reduce`].
#[derive(Debug, Clone)]
pub struct Reduction {
    /// reduced problem as a text-serializable description
    pub spec: ProblemSpec,
    pub problem: DaeProblem1,
    pub report: ReductionReport,
    /// false when `F3(t)` is not an orthogonal frame with constant `F3 F3'^T`;
    /// the reduced system is still valid but outside the scope of the frame results
    pub frame_suitable: bool,
}

/// Entry `(i, j)` of `L^T M(t) R` as an expression, with `M` given entrywise.
fn sandwich_entry(l: &Mat, m: &ExprMatrix, r: &Mat, i: usize, j: usize) -> Expr {
    let n = m.len();
    let terms = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).filter_map(|(a, b)| {
        let c = l[(a, i)] * r[(b, j)];
        (c.abs() > COEF_CUTOFF).then(|| (c, m[a][b].clone()))
    });
    linear_combination(terms)
}

fn sandwich(l: &Mat, m: &ExprMatrix, r: &Mat, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> ExprMatrix {
    rows.map(|i| cols.clone().map(|j| sandwich_entry(l, m, r, i, j)).collect()).collect()
}

/// Reduces to `x' = lambda E1^{-1}(C1(t) S1 + C2(t) S2)`, `F3(t) x + F4(t) y = 0`,
/// written as a moving-constraint problem with `A := F3`, `B := F4`, `g(p, q) = p + q`.
pub fn reduce(dae: &SemiLinearDae) -> Result<Reduction> {
    let report = check_conditions(dae, DEFAULT_GRID)?;
    if !report.conditions_hold {
        return Err(Error::ConditionsViolated(format!(
            "block residuals E {:.3e}, F {:.3e}, C {:.3e}; subspace gaps {:.3e}, {:.3e}",
            report.e_block_residual,
            report.f_top_residual,
            report.c_bottom_residual,
            report.kernel_c_residual,
            report.image_f_residual
        )));
    }
    if report.f3_min_det < BLOCK_DET_TOL || report.f4_min_det < BLOCK_DET_TOL {
        return Err(Error::SingularBlock(format!(
            "min |det F3| = {:.3e}, min |det F4| = {:.3e}",
            report.f3_min_det, report.f4_min_det
        )));
    }
    let (n, r) = (report.n, report.r);
    let (p, q) = (&report.p, &report.q);
    let f3 = sandwich(p, &dae.f_exprs, q, r..n, 0..r);
    let f4 = sandwich(p, &dae.f_exprs, q, r..n, r..n);
    let c_top = sandwich(p, &dae.c_exprs, q, 0..r, 0..n);
    let e1_inv = report.e1.inverse().map_err(|e| Error::SingularBlock(format!("E1: {e}")))?;

    // S~(x, y) = Q^T S(Q (x, y))
    let z: Vec<Expr> = (0..n)
        .map(|j| if j < r { Expr::var(&format!("x{}", j + 1)) } else { Expr::var(&format!("y{}", j - r + 1)) })
        .collect();
    let qz: Vec<Expr> = (0..n)
        .map(|k| linear_combination((0..n).filter(|&j| q[(k, j)].abs() > COEF_CUTOFF).map(|j| (q[(k, j)], z[j].clone()))))
        .collect();
    let resolve = x_slot(n);
    let s_sub: Vec<Expr> = dae
        .s_exprs
        .iter()
        .map(|e| {
            e.substitute(&|name| {
                if name == "pi" {
                    None
                } else {
                    resolve(name).map(|k| qz[k].clone())
                }
            })
        })
        .collect();
    let s_tilde: Vec<Expr> = (0..n)
        .map(|i| linear_combination((0..n).filter(|&k| q[(k, i)].abs() > COEF_CUTOFF).map(|k| (q[(k, i)], s_sub[k].clone()))))
        .collect();
    let cs: Vec<Expr> = (0..r)
        .map(|j| (0..n).fold(Expr::num(0.0), |acc, k| add(acc, mul(c_top[j][k].clone(), s_tilde[k].clone()))))
        .collect();
    let f: Vec<Expr> = (0..r)
        .map(|i| linear_combination((0..r).filter(|&j| e1_inv[(i, j)].abs() > COEF_CUTOFF).map(|j| (e1_inv[(i, j)], cs[j].clone()))))
        .collect();
    let g: Vec<Expr> = (1..=r).map(|i| add(Expr::var(&format!("p{i}")), Expr::var(&format!("q{i}")))).collect();

    let column = |v: Vec<Expr>| v.into_iter().map(|e| vec![e]).collect::<ExprMatrix>();
    let mut spec = ProblemSpec {
        name: format!("{}_reduced", dae.name),
        kind: Kind::Dae1,
        m: r,
        s: r,
        period: dae.period,
        fd_derivatives: dae.fd_derivatives,
        sections: Vec::new(),
    };
    spec.set_section("f", column(f));
    spec.set_section("g", column(g));
    spec.set_section("A", f3);
    spec.set_section("B", f4);
    let Problem::Dae(DaeProblem::First(problem)) = spec.build()? else {
        unreachable!("reduced spec is first order")
    };
    let audit = frame_audit(&problem.a, DEFAULT_GRID, problem.a.default_tol())?;
    let frame_suitable = audit.holds();
    if !frame_suitable {
        log::warn!(
            "F3(t) is not an orthogonal frame with constant F3 F3'^T (orthogonality {:.3e}, constancy {:.3e})",
            audit.orthogonality_residual,
            audit.right_product_residual
        );
    }
    Ok(Reduction { spec, problem, report, frame_suitable })
}

// ---------------------------------------------------------------------------
// Direct integration of the unreduced system
// ---------------------------------------------------------------------------

struct Radau3 {
    c: [f64; 3],
    a: [[f64; 3]; 3],
}

impl Radau3 {
    fn new() -> Radau3 {
        let s6 = 6f64.sqrt();
        Radau3 {
            c: [(4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0],
            a: [
                [(88.0 - 7.0 * s6) / 360.0, (296.0 - 169.0 * s6) / 1800.0, (-2.0 + 3.0 * s6) / 225.0],
                [(296.0 + 169.0 * s6) / 1800.0, (88.0 + 7.0 * s6) / 360.0, (-2.0 - 3.0 * s6) / 225.0],
                [(16.0 - s6) / 36.0, (16.0 + s6) / 36.0, 1.0 / 9.0],
            ],
        }
    }
}

/// Integrates `E x' = F(t) x + lambda C(t) S(x)` over `[0, span]` in `steps` steps of
/// the 3-stage Radau IIA collocation method (order 5, stiffly accurate). `x0` must be
/// consistent with the algebraic rows. Returns the node values.
pub fn integrate_direct(dae: &SemiLinearDae, lambda: f64, x0: &[f64], span: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let n = dae.n;
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("initial state of length {} for n = {n}", x0.len())));
    }
    let rk = Radau3::new();
    let h = span / steps as f64;
    let mut out = vec![x0.to_vec()];
    let mut x = x0.to_vec();
    for k in 0..steps {
        let t0 = k as f64 * h;
        let rhs: Vec<Mat> = (0..3).map(|i| dae.fpath.eval(t0 + rk.c[i] * h, 0)).collect::<Result<_>>()?;
        let cmat: Vec<Mat> = (0..3).map(|i| dae.cpath.eval(t0 + rk.c[i] * h, 0)).collect::<Result<_>>()?;
        let xn = x.clone();
        let size = norm_inf(&xn).max(1.0);
        let cfg = NewtonConfig { tol_residual: 1e-12 * size, tol_step: 1e-13 * size, max_iters: 30, ..NewtonConfig::default() };
        let residual = |stages: &[f64]| -> Result<Vec<f64>> {
            let mut g = Vec::with_capacity(3);
            for j in 0..3 {
                let xj = &stages[j * n..(j + 1) * n];
                let fx = rhs[j].mul_vec(xj);
                let cs = cmat[j].mul_vec(&dae.s_map(xj)?);
                g.push(fx.iter().zip(&cs).map(|(a, b)| a + lambda * b).collect::<Vec<_>>());
            }
            let mut res = Vec::with_capacity(3 * n);
            for i in 0..3 {
                let xi = &stages[i * n..(i + 1) * n];
                let dx: Vec<f64> = xi.iter().zip(&xn).map(|(a, b)| a - b).collect();
                let lhs = dae.e.mul_vec(&dx);
                for row in 0..n {
                    let comb: f64 = (0..3).map(|j| rk.a[i][j] * g[j][row]).sum();
                    res.push(lhs[row] - h * comb);
                }
            }
            Ok(res)
        };
        let guess: Vec<f64> = xn.iter().cycle().take(3 * n).copied().collect();
        let stages = newton_solve_fd(residual, &guess, &cfg)?;
        x = stages[2 * n..].to_vec();
        out.push(x.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::probfile::expr::parse_expr;

    fn worked() -> SemiLinearDae {
        match fixtures::load("semilinear_4x4").unwrap() {
            Problem::SemiLinear(d) => d,
            _ => panic!(),
        }
    }

    fn exprs(rows: &[&[&str]]) -> ExprMatrix {
        rows.iter().map(|r| r.iter().map(|s| parse_expr(s).unwrap()).collect()).collect()
    }

    #[test]
    fn worked_example_blocks() {
        let dae = worked();
        let rep = check_conditions(&dae, 64).unwrap();
        assert!(rep.conditions_hold);
        assert_eq!(rep.sigma, vec![1.0, 1.0, 0.0, 0.0]);
        assert!(rep.e_block_residual <= 1e-10 && rep.f_top_residual <= 1e-10 && rep.c_bottom_residual <= 1e-10);
        assert!(rep.kernel_c_residual <= 1e-10 && rep.image_f_residual <= 1e-10);
        let red = reduce(&dae).unwrap();
        assert!(red.frame_suitable);
        for k in 0..64 {
            let t = k as f64 * dae.period / 64.0;
            let a = red.problem.a.eval(t, 0).unwrap();
            let rot = Mat::from_rows(&[[t.cos(), -t.sin()], [t.sin(), t.cos()]]);
            assert!((&a - &rot).max_abs() <= 1e-10);
            assert!((&red.problem.b.eval(t, 0).unwrap() - &Mat::identity(2)).max_abs() <= 1e-10);
        }
        // reduced field: ((2 + cos t) x1 + x2 + y1, x1 + (3 + sin t) y1 + 2 y2)
        let t = 0.8;
        let (x, y) = ([0.3, -1.1], [0.7, 0.2]);
        let f = (red.problem.f)(t, &x, &y).unwrap();
        let expect = [(2.0 + t.cos()) * x[0] + x[1] + y[0], x[0] + (3.0 + t.sin()) * y[0] + 2.0 * y[1]];
        assert!((f[0] - expect[0]).abs() < 1e-14 && (f[1] - expect[1]).abs() < 1e-14);
    }

    #[test]
    fn two_by_two_conditions() {
        let dae = SemiLinearDae::new(
            "tiny",
            Mat::diag(&[1.0, 0.0]),
            exprs(&[&["0", "0"], &["1", "0"]]),
            exprs(&[&["1", "0"], &["0", "0"]]),
            vec![parse_expr("x1").unwrap(), parse_expr("x2").unwrap()],
            1.0,
            false,
        )
        .unwrap();
        let rep = check_conditions(&dae, 16).unwrap();
        assert!(rep.conditions_hold);
        assert_eq!(rep.r, 1);
    }

    #[test]
    fn violated_kernel_condition() {
        let dae = worked();
        let mut c = dae.c_exprs.clone();
        c[1][1] = parse_expr("1").unwrap();
        let bad = SemiLinearDae::new("bad", dae.e.clone(), dae.f_exprs.clone(), c, dae.s_exprs.clone(), dae.period, false)
            .unwrap();
        let rep = check_conditions(&bad, 16).unwrap();
        assert!(rep.kernel_c_residual > 1e-3);
        assert!(!rep.conditions_hold);
        assert!(matches!(reduce(&bad), Err(Error::ConditionsViolated(_))));
    }

    #[test]
    fn full_rank_e_rejected() {
        let dae = worked();
        let id = SemiLinearDae::new("id", Mat::identity(4), dae.f_exprs.clone(), dae.c_exprs.clone(), dae.s_exprs.clone(), dae.period, false)
            .unwrap();
        assert!(matches!(reduce(&id), Err(Error::RankMismatch { rank: 4, expected: 2 })));
    }

    #[test]
    fn scaled_e_halves_the_field() {
        let dae = worked();
        let a = reduce(&dae).unwrap();
        let b = reduce(&dae.with_scaled_e(2.0)).unwrap();
        let (x, y) = ([0.4, 0.1], [-0.3, 0.9]);
        let fa = (a.problem.f)(1.3, &x, &y).unwrap();
        let fb = (b.problem.f)(1.3, &x, &y).unwrap();
        for i in 0..2 {
            assert!((fb[i] - 0.5 * fa[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn subspace_gap_basics() {
        let e1 = Mat::from_rows(&[[1.0], [0.0]]);
        let e2 = Mat::from_rows(&[[0.0], [1.0]]);
        assert_eq!(subspace_gap(&e1, &e1).unwrap(), 0.0);
        assert!((subspace_gap(&e1, &e2).unwrap() - 1.0).abs() < 1e-15);
        let tilt = Mat::from_rows(&[[0.6], [0.8]]);
        assert!((subspace_gap(&e1, &tilt).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn radau_on_scalar_ode() {
        // x' = -x with E = I: compare with exp(-t)
        let dae = SemiLinearDae::new(
            "decay",
            Mat::identity(1),
            exprs(&[&["-1"]]),
            exprs(&[&["0"]]),
            vec![parse_expr("x").unwrap()],
            1.0,
            false,
        )
        .unwrap();
        let xs = integrate_direct(&dae, 0.0, &[1.0], 1.0, 10).unwrap();
        assert!((xs[10][0] - (-1.0f64).exp()).abs() < 1e-9);
    }
}
