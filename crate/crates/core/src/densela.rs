//! Small dense linear algebra: matrices, LU solves, damped Newton iteration,
//! one-sided Jacobi SVD, periodic quadrature and classical RK4 stepping.
//!
//! Everything here is sized for desk-scale problems (dimension well below 100)
//! and favours transparency over speed.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Relative pivot threshold used by [`Lu::factor`].
pub const PIVOT_THRESHOLD: f64 = 1e-13;

/// Maximum number of Jacobi sweeps in [`svd_small`].
pub const SVD_MAX_SWEEPS: usize = 50;

/// Dense row-major real matrix.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat{}x{}[", self.rows, self.cols)?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{:.6e}", self[(i, j)])?;
            }
        }
        write!(f, "]")
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Mat {
        let mut m = Mat::zeros(entries.len(), entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Mat {
        let r = rows.len();
        let c = rows.first().map(|row| row.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), c, "ragged rows in Mat::from_rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Column vector (n x 1).
    pub fn column(v: &[f64]) -> Mat {
        Mat { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[f64]) {
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    /// Induced infinity norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copy of the `nr x nc` block whose top-left corner is `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Mat {
        let mut b = Mat::zeros(nr, nc);
        for i in 0..nr {
            for j in 0..nc {
                b[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        b
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Mat) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Entrywise mean of a non-empty list of equally shaped matrices.
    pub fn mean(mats: &[Mat]) -> Mat {
        let first = &mats[0];
        let mut acc = Mat::zeros(first.rows, first.cols);
        for m in mats {
            for (a, b) in acc.data.iter_mut().zip(&m.data) {
                *a += b;
            }
        }
        acc.scale(1.0 / mats.len() as f64)
    }

    /// Determinant via partial-pivoting elimination; returns 0 for exactly singular input.
    pub fn det(&self) -> f64 {
        assert!(self.is_square(), "det of non-square matrix");
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
                .unwrap_or(k);
            if a[p * n + k] == 0.0 {
                return 0.0;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                det = -det;
            }
            let piv = a[k * n + k];
            det *= piv;
            for i in k + 1..n {
                let l = a[i * n + k] / piv;
                if l != 0.0 {
                    for j in k..n {
                        a[i * n + j] -= l * a[k * n + j];
                    }
                }
            }
        }
        det
    }

    pub fn inverse(&self) -> Result<Mat> {
        let lu = Lu::factor(self)?;
        let n = self.rows;
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            inv.set_col(j, &lu.solve(&e));
        }
        Ok(inv)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Mat {
    type Output = Mat;
    fn add(self, rhs: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add dimension mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Mat {
    type Output = Mat;
    fn sub(self, rhs: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub dimension mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        self.matmul(rhs)
    }
}

impl Neg for &Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn vsub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn vadd(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `a + s * b`
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

// ---------------------------------------------------------------------------
// LU with partial pivoting
// ---------------------------------------------------------------------------

/// LU factorization with partial pivoting, `PA = LU`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Fails with `SingularMatrix` when a pivot drops below `1e-13 * ||A||_inf`.
    pub fn factor(a: &Mat) -> Result<Lu> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "LU of a {}x{} matrix",
                a.rows, a.cols
            )));
        }
        if !a.is_finite() {
            return Err(Error::EvaluationFailure("non-finite matrix entry".into()));
        }
        let n = a.rows;
        let threshold = PIVOT_THRESHOLD * a.norm_inf();
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[i * n + k].abs().total_cmp(&lu[j * n + k].abs()))
                .unwrap_or(k);
            let piv = lu[p * n + k];
            if piv.abs() <= threshold || piv == 0.0 {
                return Err(Error::SingularMatrix(format!(
                    "pivot {:.3e} at column {k} below threshold {:.3e}",
                    piv.abs(),
                    threshold
                )));
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            for i in k + 1..n {
                let l = lu[i * n + k] / piv;
                lu[i * n + k] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= l * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }

    pub fn solve_mat(&self, b: &Mat) -> Mat {
        let mut out = Mat::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            out.set_col(j, &self.solve(&b.col(j)));
        }
        out
    }
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve_linear(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    if a.rows != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} system with right-hand side of length {}",
            a.rows,
            a.cols,
            b.len()
        )));
    }
    Ok(Lu::factor(a)?.solve(b))
}

// ---------------------------------------------------------------------------
// Newton iteration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub max_iters: usize,
    /// Absolute tolerance on the infinity norm of the residual.
    pub tol_residual: f64,
    /// Absolute tolerance on the infinity norm of the last accepted step.
    pub tol_step: f64,
    /// Smallest damping factor tried by the halving line search.
    pub damping_min: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { max_iters: 50, tol_residual: 1e-12, tol_step: 1e-10, damping_min: 1.0 / 1024.0 }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0
            || !(self.tol_residual > 0.0)
            || !(self.tol_step > 0.0)
            || !(self.damping_min > 0.0 && self.damping_min <= 1.0)
        {
            return Err(Error::SchemaError(format!("invalid Newton configuration {self:?}")));
        }
        Ok(())
    }
}

/// Forward-difference Jacobian with step `1e-7 * (1 + |x_i|)`.
pub fn fd_jacobian<F>(f: &F, x: &[f64], fx: &[f64]) -> Result<Mat>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + ?Sized,
{
    let n = x.len();
    let mut jac = Mat::zeros(fx.len(), n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = 1e-7 * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j];
        let h = (x[j] + h) - x[j];
        for i in 0..fx.len() {
            jac[(i, j)] = (fp[i] - fx[i]) / h;
        }
    }
    Ok(jac)
}

/// Central-difference Jacobian with fixed step `h`.
pub fn central_jacobian<F>(f: &F, x: &[f64], h: f64) -> Result<Mat>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + ?Sized,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j] - h;
        let fm = f(&xp)?;
        xp[j] = x[j];
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
    }
    let rows = cols.first().map(|c| c.len()).unwrap_or(0);
    let mut jac = Mat::zeros(rows, n);
    for (j, c) in cols.iter().enumerate() {
        jac.set_col(j, c);
    }
    Ok(jac)
}

/// Damped Newton iteration with halving backtracking.
///
/// Converged means `||r||_inf <= tol_residual` and the last step `<= tol_step`; if the
/// iteration budget runs out with the residual already below tolerance the iterate is
/// still returned, so a successful result always satisfies the residual bound.
pub fn newton_solve<R, J>(residual: R, jacobian: J, x0: &[f64], cfg: &NewtonConfig) -> Result<Vec<f64>>
where
    R: Fn(&[f64]) -> Result<Vec<f64>>,
    J: Fn(&[f64]) -> Result<Mat>,
{
    let mut x = x0.to_vec();
    let mut r = residual(&x)?;
    if r.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "residual of length {} for {} unknowns",
            r.len(),
            x.len()
        )));
    }
    let mut rn = checked_norm(&r)?;
    let mut last_step = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        if rn == 0.0 || (rn <= cfg.tol_residual && last_step <= cfg.tol_step) {
            return Ok(x);
        }
        let jac = jacobian(&x)?;
        let lu = match Lu::factor(&jac) {
            Ok(lu) => lu,
            Err(_) if rn <= cfg.tol_residual => return Ok(x),
            Err(e) => return Err(Error::SingularJacobian(e.to_string())),
        };
        let dx = lu.solve(&r);
        let mut alpha = 1.0;
        loop {
            let trial = axpy(&x, -alpha, &dx);
            let accepted = match residual(&trial) {
                Ok(rt) => {
                    let tn = norm_inf(&rt);
                    if tn.is_finite() && (tn < rn || tn <= cfg.tol_residual) {
                        Some((trial, rt, tn))
                    } else if alpha * 0.5 < cfg.damping_min && tn.is_finite() && rn > cfg.tol_residual {
                        // line search exhausted: take the smallest step anyway
                        Some((trial, rt, tn))
                    } else {
                        None
                    }
                }
                Err(_) => None,
            };
            if let Some((xt, rt, tn)) = accepted {
                last_step = alpha * norm_inf(&dx);
                x = xt;
                r = rt;
                rn = tn;
                break;
            }
            alpha *= 0.5;
            if alpha < cfg.damping_min {
                if rn <= cfg.tol_residual {
                    return Ok(x);
                }
                return Err(Error::NoConvergence(format!(
                    "line search failed with residual {rn:.3e}"
                )));
            }
        }
    }
    if rn <= cfg.tol_residual {
        Ok(x)
    } else {
        Err(Error::NoConvergence(format!(
            "{} iterations, residual {rn:.3e} > {:.3e}",
            cfg.max_iters, cfg.tol_residual
        )))
    }
}

/// [`newton_solve`] with a forward-difference Jacobian.
pub fn newton_solve_fd<R>(residual: R, x0: &[f64], cfg: &NewtonConfig) -> Result<Vec<f64>>
where
    R: Fn(&[f64]) -> Result<Vec<f64>>,
{
    newton_solve(
        &residual,
        |x: &[f64]| {
            let fx = residual(x)?;
            fd_jacobian(&residual, x, &fx)
        },
        x0,
        cfg,
    )
}

fn checked_norm(r: &[f64]) -> Result<f64> {
    let n = norm_inf(r);
    if n.is_finite() {
        Ok(n)
    } else {
        Err(Error::NonfiniteResult("residual at initial iterate".into()))
    }
}

// ---------------------------------------------------------------------------
// SVD
// ---------------------------------------------------------------------------

/// `E = P diag(sigma) Q^T` with orthogonal `P`, `Q` and nonincreasing `sigma >= 0`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub p: Mat,
    pub sigma: Vec<f64>,
    pub q: Mat,
}

impl Svd {
    /// Number of singular values above `rel_tol * sigma_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let smax = self.sigma.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.sigma.iter().filter(|&&s| s > rel_tol * smax).count()
    }
}

/// One-sided (Hestenes) Jacobi SVD of a square matrix.
///
/// Columns of `Q` are oriented so that their largest-magnitude entry is positive;
/// the matching columns of `P` then make `P^T E Q` nonnegative on the diagonal.
/// Left singular vectors for zero singular values are completed deterministically
/// from the standard basis.
pub fn svd_small(e: &Mat) -> Result<Svd> {
    if !e.is_square() {
        return Err(Error::DimensionMismatch(format!("svd_small of a {}x{} matrix", e.rows, e.cols)));
    }
    if !e.is_finite() {
        return Err(Error::EvaluationFailure("non-finite matrix entry".into()));
    }
    let n = e.rows;
    // work column-major for cheap column access
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| e.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut c = vec![0.0; n];
            c[j] = 1.0;
            c
        })
        .collect();
    let tol = 4.0 * f64::EPSILON;
    // columns below this squared norm are numerically zero and left alone
    let negligible = (f64::EPSILON * e.data.iter().map(|x| x * x).sum::<f64>().sqrt()).powi(2);
    let mut converged = false;
    for _ in 0..SVD_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let a = dot(&w[i], &w[i]);
                let b = dot(&w[j], &w[j]);
                let d = dot(&w[i], &w[j]);
                if d == 0.0 || d.abs() <= tol * (a * b).sqrt() || a.min(b) <= negligible {
                    continue;
                }
                rotated = true;
                let zeta = (b - a) / (2.0 * d);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, i, j, c, s);
                rotate_pair(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!("Jacobi SVD after {SVD_MAX_SWEEPS} sweeps")));
    }

    let norms: Vec<f64> = w.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let mut sigma = Vec::with_capacity(n);
    let mut qcols = Vec::with_capacity(n);
    let mut pcols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    for &k in &order {
        let mut qk = v[k].clone();
        let mut wk = w[k].clone();
        let lead = (0..n).max_by(|&a, &b| qk[a].abs().total_cmp(&qk[b].abs()).then(b.cmp(&a))).unwrap();
        if qk[lead] < 0.0 {
            qk.iter_mut().for_each(|x| *x = -*x);
            wk.iter_mut().for_each(|x| *x = -*x);
        }
        let s = norms[k];
        sigma.push(s);
        qcols.push(qk);
        pcols.push(if s > 0.0 { Some(wk.iter().map(|x| x / s).collect()) } else { None });
    }

    // modified Gram-Schmidt in sigma order, then completion from e_1..e_n
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pfinal: Vec<Option<Vec<f64>>> = vec![None; n];
    for (idx, col) in pcols.iter().enumerate() {
        if let Some(c) = col {
            let mut c = c.clone();
            for _ in 0..2 {
                for b in &basis {
                    let proj = dot(b, &c);
                    c.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
                }
            }
            let nc = norm2(&c);
            if nc > 0.5 {
                c.iter_mut().for_each(|x| *x /= nc);
                basis.push(c.clone());
                pfinal[idx] = Some(c);
            }
        }
    }
    let mut candidate = 0;
    for slot in pfinal.iter_mut() {
        if slot.is_some() {
            continue;
        }
        while candidate < n {
            let mut c = vec![0.0; n];
            c[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for b in &basis {
                    let proj = dot(b, &c);
                    c.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
                }
            }
            let nc = norm2(&c);
            if nc > 1e-3 {
                c.iter_mut().for_each(|x| *x /= nc);
                basis.push(c.clone());
                *slot = Some(c);
                break;
            }
        }
    }

    let mut p = Mat::zeros(n, n);
    let mut q = Mat::zeros(n, n);
    for j in 0..n {
        p.set_col(j, pfinal[j].as_ref().expect("orthonormal completion exhausted"));
        q.set_col(j, &qcols[j]);
    }
    Ok(Svd { p, sigma, q })
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    for k in 0..cols[i].len() {
        let a = cols[i][k];
        let b = cols[j][k];
        cols[i][k] = c * a - s * b;
        cols[j][k] = s * a + c * b;
    }
}

/// Minimum-norm least-squares solution of `A x = b` via [`svd_small`], discarding
/// singular values below `rel_tol * sigma_max`.
pub fn pseudo_solve(a: &Mat, b: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
    let svd = svd_small(a)?;
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let ptb = svd.p.transpose().mul_vec(b);
    let mut z = vec![0.0; a.cols()];
    for (i, &s) in svd.sigma.iter().enumerate() {
        if s > rel_tol * smax && s > 0.0 {
            z[i] = ptb[i] / s;
        }
    }
    Ok(svd.q.mul_vec(&z))
}

// ---------------------------------------------------------------------------
// Quadrature, time stepping, matrix exponential
// ---------------------------------------------------------------------------

/// Mean value `(1/T) * integral_0^T h(t) dt` of a `T`-periodic vector function by the
/// composite trapezoid rule on `n` uniform nodes (the endpoint weights merge).
pub fn quadrature_periodic<H>(h: H, period: f64, n: usize) -> Result<Vec<f64>>
where
    H: Fn(f64) -> Result<Vec<f64>>,
{
    if n < 8 {
        return Err(Error::SchemaError(format!("quadrature needs n >= 8, got {n}")));
    }
    if !(period > 0.0) {
        return Err(Error::SchemaError(format!("period must be positive, got {period}")));
    }
    let mut acc = h(0.0)?;
    for k in 1..n {
        let v = h(period * k as f64 / n as f64)?;
        acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(field: F, t: f64, u: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k1 = field(t, u)?;
    let k2 = field(t + 0.5 * h, &axpy(u, 0.5 * h, &k1))?;
    let k3 = field(t + 0.5 * h, &axpy(u, 0.5 * h, &k2))?;
    let k4 = field(t + h, &axpy(u, h, &k3))?;
    Ok((0..u.len())
        .map(|i| u[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
pub fn expm(a: &Mat) -> Mat {
    assert!(a.is_square(), "expm of non-square matrix");
    let n = a.rows;
    let norm = a.norm_inf();
    let squarings = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let scaled = a.scale(0.5f64.powi(squarings));
    let mut sum = Mat::identity(n);
    let mut term = Mat::identity(n);
    for k in 1..40 {
        term = term.matmul(&scaled).scale(1.0 / k as f64);
        sum = &sum + &term;
        if term.max_abs() <= f64::EPSILON * 1e-3 * sum.max_abs() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum);
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        let data = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Mat::from_vec(n, n, data).unwrap()
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let x = solve_linear(&Mat::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
        let x = solve_linear(&Mat::from_rows(&[[2.0, 0.0], [0.0, 4.0]]), &[2.0, 8.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn solve_random_well_conditioned_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            // diagonally dominant keeps the condition number modest
            let mut a = random_mat(&mut rng, 5);
            for i in 0..5 {
                a[(i, i)] += 6.0;
            }
            let b: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let x = solve_linear(&a, &b).unwrap();
            let r = vsub(&a.mul_vec(&x), &b);
            assert!(norm_inf(&r) <= 1e-10 * (1.0 + norm_inf(&b)));
        }
    }

    #[test]
    fn singular_pivot_detected() {
        let a = Mat::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(solve_linear(&a, &[1.0, 1.0]), Err(Error::SingularMatrix(_))));
        let tiny = Mat::from_rows(&[[1.0, 0.0], [0.0, 1e-15]]);
        assert!(matches!(Lu::factor(&tiny), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn newton_examples() {
        let cfg = NewtonConfig::default();
        // q^3 + q - 2 = (q - 1)(q^2 + q + 2)
        let x = newton_solve_fd(|q: &[f64]| Ok(vec![q[0].powi(3) + q[0] - 2.0]), &[0.0], &cfg).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10);
        let x = newton_solve_fd(|q: &[f64]| Ok(vec![q[0]]), &[5.0], &cfg).unwrap();
        assert!(x[0].abs() <= 1e-12);
        let x = newton_solve(
            |q: &[f64]| Ok(vec![q[0].powi(3) + q[0]]),
            |q: &[f64]| Ok(Mat::from_rows(&[[3.0 * q[0] * q[0] + 1.0]])),
            &[0.5],
            &cfg,
        )
        .unwrap();
        assert!(x[0].abs() <= 1e-12);
    }

    #[test]
    fn newton_residual_bound_is_honoured() {
        let cfg = NewtonConfig { tol_residual: 1e-9, ..NewtonConfig::default() };
        // atan has a small basin for plain Newton; damping keeps it convergent
        let x = newton_solve_fd(|q: &[f64]| Ok(vec![q[0].atan()]), &[3.0], &cfg).unwrap();
        assert!(x[0].atan().abs() <= cfg.tol_residual);
    }

    #[test]
    fn newton_reports_no_convergence() {
        let cfg = NewtonConfig { max_iters: 5, ..NewtonConfig::default() };
        let r = newton_solve_fd(|q: &[f64]| Ok(vec![q[0] * q[0] + 1.0]), &[0.3], &cfg);
        assert!(matches!(r, Err(Error::NoConvergence(_)) | Err(Error::SingularJacobian(_))));
    }

    fn check_svd(e: &Mat, svd: &Svd) {
        let n = e.rows();
        let i = Mat::identity(n);
        assert!((&svd.p.transpose().matmul(&svd.p) - &i).norm_inf() <= 1e-12);
        assert!((&svd.q.transpose().matmul(&svd.q) - &i).norm_inf() <= 1e-12);
        let recon = svd.p.matmul(&Mat::diag(&svd.sigma)).matmul(&svd.q.transpose());
        assert!((e - &recon).norm_inf() <= 1e-10 * e.norm_inf().max(f64::MIN_POSITIVE));
        for w in svd.sigma.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(svd.sigma.iter().all(|&s| s >= 0.0));
        let d = svd.p.transpose().matmul(e).matmul(&svd.q);
        for r in 0..n {
            assert!(d[(r, r)] >= -1e-14);
            for c in 0..n {
                if r != c {
                    assert!(d[(r, c)].abs() <= 1e-10 * e.norm_inf().max(1.0));
                }
            }
        }
    }

    #[test]
    fn svd_diag() {
        let e = Mat::diag(&[3.0, 0.0]);
        let svd = svd_small(&e).unwrap();
        assert_eq!(svd.sigma, vec![3.0, 0.0]);
        assert_eq!(svd.p, Mat::identity(2));
        assert_eq!(svd.q, Mat::identity(2));
        check_svd(&e, &svd);
    }

    #[test]
    fn svd_random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=8 {
            for _ in 0..5 {
                let e = random_mat(&mut rng, n);
                let svd = svd_small(&e).unwrap();
                check_svd(&e, &svd);
            }
        }
    }

    #[test]
    fn svd_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_mat(&mut rng, 5);
        let mut b = random_mat(&mut rng, 5);
        for i in 0..5 {
            for j in 2..5 {
                b[(i, j)] = 0.0;
            }
        }
        let e = a.matmul(&b).matmul(&random_mat(&mut rng, 5));
        let svd = svd_small(&e).unwrap();
        check_svd(&e, &svd);
        assert_eq!(svd.rank(1e-10), 2);
    }

    #[test]
    fn pseudo_solve_on_singular_system() {
        let a = Mat::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        let x = pseudo_solve(&a, &[2.0, 5.0], 1e-12).unwrap();
        assert_eq!(x, vec![2.0, 0.0]);
    }

    #[test]
    fn quadrature_examples() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let m = quadrature_periodic(|t| Ok(vec![t.sin()]), two_pi, 64).unwrap();
        assert!(m[0].abs() < 1e-12);
        let m = quadrature_periodic(|t| Ok(vec![2.0 + t.cos()]), two_pi, 64).unwrap();
        assert!((m[0] - 2.0).abs() < 1e-12);
        // integral of cos^2 over a period is pi, so the mean is 1/2
        let m = quadrature_periodic(|t| Ok(vec![t.cos().powi(2)]), two_pi, 64).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-12);
        assert!(quadrature_periodic(|_| Ok(vec![1.0]), two_pi, 4).is_err());
    }

    #[test]
    fn quadrature_exact_on_trig_polynomials() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let n = 32;
        for k in 1..n / 2 {
            let m = quadrature_periodic(|t| Ok(vec![(k as f64 * t).cos(), (k as f64 * t).sin()]), two_pi, n)
                .unwrap();
            assert!(norm_inf(&m) < 1e-12, "degree {k}");
        }
    }

    #[test]
    fn rk4_examples() {
        let u = rk4_step(|_, u: &[f64]| Ok(vec![0.0; u.len()]), 0.0, &[1.0, -2.0], 0.3).unwrap();
        assert_eq!(u, vec![1.0, -2.0]);
        let u = rk4_step(|_, u: &[f64]| Ok(vec![u[0]]), 0.0, &[1.0], 0.1).unwrap();
        assert!((u[0] - 0.1f64.exp()).abs() < 1e-7);
        let n = 256;
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let mut u = vec![1.0, 0.0];
        for k in 0..n {
            u = rk4_step(|_, u: &[f64]| Ok(vec![-u[1], u[0]]), k as f64 * h, &u, h).unwrap();
        }
        assert!(norm_inf(&vsub(&u, &[1.0, 0.0])) < 1e-6);
    }

    #[test]
    fn expm_of_rotation_generator() {
        let s = Mat::from_rows(&[[0.0, -1.0], [1.0, 0.0]]);
        let t = 0.7;
        let r = expm(&s.scale(t));
        let expected = Mat::from_rows(&[[t.cos(), -t.sin()], [t.sin(), t.cos()]]);
        assert!((&r - &expected).max_abs() < 1e-14);
        let full = expm(&s.scale(2.0 * std::f64::consts::PI));
        assert!((&full - &Mat::identity(2)).max_abs() < 1e-13);
    }

    #[test]
    fn det_and_inverse() {
        let a = Mat::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]);
        assert_eq!(a.det(), 1.0);
        let inv = a.inverse().unwrap();
        assert!((&inv.matmul(&a) - &Mat::identity(2)).max_abs() < 1e-15);
        assert_eq!(Mat::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).det(), 0.0);
    }
}
