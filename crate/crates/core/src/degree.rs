//! Brouwer degree of the maps whose zeros seed branches of periodic solutions:
//! zero enumeration by multistart Newton on a box, the block-triangular shortcut
//! `deg = sign(det D) * sum sign det d2 g`, and the time-averaged map.

use std::sync::Arc;

use crate::densela::{fd_jacobian, newton_solve, norm_inf, quadrature_periodic, Mat, NewtonConfig};
use crate::error::{Error, Result};
use crate::matpath::{frame_audit, DEFAULT_GRID};
use crate::transform::{Constraint, DaeProblem, TransformedSystem};

/// Distance at which two located zeros are merged.
pub const DEDUP_TOL: f64 = 1e-6;
/// Zeros closer than this to the boundary are rejected.
pub const BOUNDARY_TOL: f64 = 1e-6;
/// Smallest accepted `|det J|` at a zero.
pub const DEGENERACY_TOL: f64 = 1e-10;
/// Default seeds per axis.
pub const DEFAULT_SEEDS: usize = 9;
/// `||M||` below which a frame counts as non-rotating.
pub const STATIC_FRAME_TOL: f64 = 1e-8;

/// Axis-aligned box `lower < x < upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<BoxRegion> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch("box corners must have equal positive length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::SchemaError("box requires lower < upper componentwise".into()));
        }
        Ok(BoxRegion { lower, upper })
    }

    /// `[-r, r]^n`
    pub fn cube(n: usize, r: f64) -> BoxRegion {
        BoxRegion { lower: vec![-r; n], upper: vec![r; n] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Projection onto the coordinates `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> BoxRegion {
        BoxRegion { lower: self.lower[range.clone()].to_vec(), upper: self.upper[range].to_vec() }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l < *v && *v < *u)
    }

    /// Signed distance to the boundary (positive inside).
    pub fn depth(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (v - l).min(u - v))
            .fold(f64::INFINITY, f64::min)
    }

    /// Uniform grid with `k` points per axis, corners included.
    pub fn grid_points(&self, k: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        let axis = |i: usize, j: usize| self.lower[i] + (self.upper[i] - self.lower[i]) * j as f64 / (k - 1) as f64;
        let total = k.pow(n as u32);
        (0..total)
            .map(|mut idx| {
                (0..n)
                    .map(|i| {
                        let j = idx % k;
                        idx /= k;
                        axis(i, j)
                    })
                    .collect()
            })
            .collect()
    }
}

/// A located regular zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Zero {
    pub point: Vec<f64>,
    pub det: f64,
    pub sign: i32,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegreeMethod {
    Reduced,
    Generic,
}

impl DegreeMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DegreeMethod::Reduced => "reduced",
            DegreeMethod::Generic => "generic",
        }
    }
}

/// Degree with its supporting evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeCertificate {
    pub degree: i64,
    pub method: DegreeMethod,
    /// zeros with the sign of the full Jacobian determinant
    pub zeros: Vec<Zero>,
    /// min `||map||_inf` over the sampled boundary
    pub boundary_margin: f64,
    /// `sign(det D)` for the reduced method
    pub linear_sign: Option<i32>,
}

type VecFn<'a> = &'a dyn Fn(&[f64]) -> Result<Vec<f64>>;
type JacFn<'a> = &'a dyn Fn(&[f64]) -> Result<Mat>;

fn zero_newton() -> NewtonConfig {
    NewtonConfig { max_iters: 100, tol_residual: 1e-12, tol_step: 1e-14, damping_min: 1.0 / 1024.0 }
}

fn det_sign(det: f64) -> i32 {
    if det > 0.0 {
        1
    } else {
        -1
    }
}

fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Polishes a Newton start; returns a zero if Newton converges inside (or within
/// [`BOUNDARY_TOL`] of) the box. Degenerate and boundary zeros are errors.
fn polish(f: VecFn, jac: JacFn, bx: &BoxRegion, start: &[f64]) -> Result<Option<Zero>> {
    let x = match newton_solve(f, jac, start, &zero_newton()) {
        Ok(x) => x,
        Err(Error::NoConvergence(_)) | Err(Error::SingularJacobian(_)) | Err(Error::NonfiniteResult(_)) => {
            return Ok(None)
        }
        Err(Error::EvaluationFailure(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let depth = bx.depth(&x);
    if depth < -BOUNDARY_TOL {
        return Ok(None);
    }
    if depth < BOUNDARY_TOL {
        return Err(Error::BoundaryZero(x));
    }
    let det = jac(&x)?.det();
    if det.abs() < DEGENERACY_TOL {
        return Err(Error::DegenerateZero { point: x, det: det.abs() });
    }
    let residual = norm_inf(&f(&x)?);
    Ok(Some(Zero { sign: det_sign(det), det, point: x, residual }))
}

fn insert_zero(zeros: &mut Vec<Zero>, z: Zero) -> bool {
    if zeros.iter().any(|w| dist_inf(&w.point, &z.point) < DEDUP_TOL) {
        return false;
    }
    zeros.push(z);
    true
}

/// All regular zeros of `f` in the box found by Newton from a `seeds`-per-axis grid.
///
/// Grid cells in which every component changes sign but which contain no located
/// zero are searched again from a refined sub-grid; if that still finds nothing the
/// result is `SuspectIncomplete`.
pub fn find_zeros(f: VecFn, jac: JacFn, bx: &BoxRegion, seeds: usize) -> Result<Vec<Zero>> {
    if seeds < 2 {
        return Err(Error::SchemaError("need at least 2 seeds per axis".into()));
    }
    let n = bx.dim();
    let points = bx.grid_points(seeds);
    let mut zeros = Vec::new();
    let mut values = Vec::with_capacity(points.len());
    for p in &points {
        values.push(f(p).ok());
        if let Some(z) = polish(f, jac, bx, p)? {
            insert_zero(&mut zeros, z);
        }
    }
    // cells indexed by their lowest corner
    let cells_per_axis = seeds - 1;
    let flat = |idx: &[usize]| idx.iter().rev().fold(0, |acc, &i| acc * seeds + i);
    let h: Vec<f64> = (0..n).map(|i| (bx.upper[i] - bx.lower[i]) / cells_per_axis as f64).collect();
    for cell in 0..cells_per_axis.pow(n as u32) {
        let mut base = vec![0usize; n];
        let mut c = cell;
        for b in base.iter_mut() {
            *b = c % cells_per_axis;
            c /= cells_per_axis;
        }
        let mut pos = vec![false; n];
        let mut neg = vec![false; n];
        let mut complete = true;
        for corner in 0..(1usize << n) {
            let idx: Vec<usize> = (0..n).map(|i| base[i] + ((corner >> i) & 1)).collect();
            match &values[flat(&idx)] {
                Some(v) => {
                    for i in 0..n {
                        pos[i] |= v[i] > 0.0;
                        neg[i] |= v[i] < 0.0;
                    }
                }
                None => complete = false,
            }
        }
        if !complete || !(0..n).all(|i| pos[i] && neg[i]) {
            continue;
        }
        let lo: Vec<f64> = (0..n).map(|i| bx.lower[i] + base[i] as f64 * h[i]).collect();
        let covered = |zs: &[Zero]| {
            zs.iter().any(|z| (0..n).all(|i| z.point[i] >= lo[i] - DEDUP_TOL && z.point[i] <= lo[i] + h[i] + DEDUP_TOL))
        };
        if covered(&zeros) {
            continue;
        }
        let sub = BoxRegion { lower: lo.clone(), upper: (0..n).map(|i| lo[i] + h[i]).collect() };
        let mut found = false;
        for p in sub.grid_points(3) {
            if let Some(z) = polish(f, jac, bx, &p)? {
                found |= insert_zero(&mut zeros, z);
            }
        }
        if !found && !covered(&zeros) {
            // a sign change in every component without a zero is possible but unusual
            return Err(Error::SuspectIncomplete(format!(
                "cell at {lo:?} shows sign changes in every component but no zero was found"
            )));
        }
    }
    zeros.sort_by(|a, b| a.point.partial_cmp(&b.point).unwrap_or(std::cmp::Ordering::Equal));
    Ok(zeros)
}

/// min `||f||_inf` over a grid on each face of the box.
pub fn boundary_margin(f: VecFn, bx: &BoxRegion, seeds: usize) -> Result<f64> {
    let n = bx.dim();
    let mut margin = f64::INFINITY;
    for axis in 0..n {
        for side in [bx.lower[axis], bx.upper[axis]] {
            if n == 1 {
                margin = margin.min(norm_inf(&f(&[side])?));
                continue;
            }
            let face = BoxRegion {
                lower: (0..n).filter(|&i| i != axis).map(|i| bx.lower[i]).collect(),
                upper: (0..n).filter(|&i| i != axis).map(|i| bx.upper[i]).collect(),
            };
            for p in face.grid_points(seeds) {
                let mut x = p.clone();
                x.insert(axis, side);
                margin = margin.min(norm_inf(&f(&x)?));
            }
        }
    }
    Ok(margin)
}

/// Degree of `f` on the box as the signed count of its regular zeros.
pub fn degree_generic(f: VecFn, jac: Option<JacFn>, bx: &BoxRegion, seeds: usize) -> Result<DegreeCertificate> {
    let fd = |x: &[f64]| -> Result<Mat> {
        let fx = f(x)?;
        fd_jacobian(f, x, &fx)
    };
    let jac: JacFn = match jac {
        Some(j) => j,
        None => &fd,
    };
    let margin = boundary_margin(f, bx, seeds)?;
    if margin <= 0.0 {
        return Err(Error::BoundaryZero(vec![]));
    }
    let zeros = find_zeros(f, jac, bx, seeds)?;
    Ok(DegreeCertificate {
        degree: zeros.iter().map(|z| z.sign as i64).sum(),
        method: DegreeMethod::Generic,
        zeros,
        boundary_margin: margin,
        linear_sign: None,
    })
}

/// `(xi, eta) -> (D xi, g(xi, eta))`, block lower-triangular Jacobian.
#[derive(Clone)]
pub struct CandidateMap {
    pub d: Mat,
    pub g: Arc<dyn Constraint>,
}

impl std::fmt::Debug for CandidateMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CandidateMap(d={:?})", self.d)
    }
}

impl CandidateMap {
    pub fn new(d: Mat, g: Arc<dyn Constraint>) -> Result<CandidateMap> {
        if d.rows() != g.m() || d.cols() != g.m() {
            return Err(Error::DimensionMismatch(format!("linear block must be {0}x{0}", g.m())));
        }
        Ok(CandidateMap { d, g })
    }

    pub fn m(&self) -> usize {
        self.g.m()
    }

    pub fn s(&self) -> usize {
        self.g.s()
    }

    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        let m = self.m();
        let mut out = self.d.mul_vec(&z[..m]);
        out.extend(self.g.eval(&z[..m], &z[m..])?);
        Ok(out)
    }

    pub fn jacobian(&self, z: &[f64]) -> Result<Mat> {
        let (m, s) = (self.m(), self.s());
        let mut j = Mat::zeros(m + s, m + s);
        j.set_block(0, 0, &self.d);
        j.set_block(m, 0, &self.g.jac_p(&z[..m], &z[m..])?);
        j.set_block(m, m, &self.g.jac_q(&z[..m], &z[m..])?);
        Ok(j)
    }
}

/// `(M xi, g)` for first order, `(-M^2 xi, g)` for second order; with drift matrices
/// the first block is the transformed system's constant drift `D0`.
pub fn candidate_map(sys: &TransformedSystem) -> Result<CandidateMap> {
    if sys.exact_drift {
        return Err(Error::HypothesisViolated(format!(
            "drift matrices do not commute with A (residual {:.3e}); the transformed drift is time-dependent",
            sys.commutation_residual
        )));
    }
    let m = &sys.audit.m;
    let d = if sys.problem.has_drift() {
        sys.d0.clone()
    } else if sys.order == 1 {
        m.clone()
    } else {
        m.matmul(m).scale(-1.0)
    };
    CandidateMap::new(d, sys.g().clone())
}

/// `sign(det D) * sum over zeros of q -> g(0, q) of sign det d2 g`.
pub fn degree_reduced(map: &CandidateMap, bx: &BoxRegion, seeds: usize) -> Result<DegreeCertificate> {
    let (m, s) = (map.m(), map.s());
    if bx.dim() != m + s {
        return Err(Error::DimensionMismatch(format!("box has dimension {}, map {}", bx.dim(), m + s)));
    }
    let det = map.d.det();
    if det == 0.0 || crate::densela::Lu::factor(&map.d).is_err() {
        return Err(Error::SingularMatrix(format!("linear block has det {det:.3e}")));
    }
    let lin = det_sign(det);
    let zero_p = vec![0.0; m];
    if !bx.slice(0..m).contains(&zero_p) {
        return Err(Error::SchemaError("box must contain xi = 0 for the reduced method".into()));
    }
    let zq = zeros_of_reduced(map.g.as_ref(), &bx.slice(m..m + s), seeds)?;
    let full = |z: &[f64]| map.eval(z);
    let margin = boundary_margin(&full, bx, seeds)?;
    if margin <= 0.0 {
        return Err(Error::BoundaryZero(vec![]));
    }
    let zeros: Vec<Zero> = zq
        .into_iter()
        .map(|z| {
            let mut point = zero_p.clone();
            point.extend(&z.point);
            Zero { point, det: det * z.det, sign: lin * z.sign, residual: z.residual }
        })
        .collect();
    Ok(DegreeCertificate {
        degree: zeros.iter().map(|z| z.sign as i64).sum(),
        method: DegreeMethod::Reduced,
        zeros,
        boundary_margin: margin,
        linear_sign: Some(lin),
    })
}

/// Zeros of `q -> g(0, q)` in the box, each with `sign det d2 g`.
pub fn zeros_of_reduced(g: &dyn Constraint, box_q: &BoxRegion, seeds: usize) -> Result<Vec<Zero>> {
    let zero_p = vec![0.0; g.m()];
    let f = |q: &[f64]| g.eval(&zero_p, q);
    let j = |q: &[f64]| g.jac_q(&zero_p, q);
    find_zeros(&f, &j, box_q, seeds)
}

/// Degree of the candidate map by both methods.
pub fn degree_both(map: &CandidateMap, bx: &BoxRegion, seeds: usize) -> Result<(DegreeCertificate, DegreeCertificate)> {
    let reduced = degree_reduced(map, bx, seeds)?;
    let f = |z: &[f64]| map.eval(z);
    let j = |z: &[f64]| map.jacobian(z);
    let generic = degree_generic(&f, Some(&j), bx, seeds)?;
    Ok((reduced, generic))
}

// ---------------------------------------------------------------------------
// Averaged map
// ---------------------------------------------------------------------------

/// `omega(xi, eta) = ((1/T) int_0^T A f(t, A^T xi, B^{-1} eta [, 0, 0]) dt, g(xi, eta))`.
#[derive(Clone, Debug)]
pub struct AveragedMap {
    problem: DaeProblem,
    quad_n: usize,
    /// `||M||_inf` of the audited frame; the construction presumes it vanishes
    pub frame_drift: f64,
}

impl AveragedMap {
    pub fn new(problem: &DaeProblem, quad_n: usize) -> Result<AveragedMap> {
        let audit = frame_audit(problem.a(), DEFAULT_GRID, problem.a().default_tol())?;
        let frame_drift = audit.m.norm_inf();
        if frame_drift > STATIC_FRAME_TOL {
            log::warn!("A A'^T is not zero (||M|| = {frame_drift:.3e}); the averaged map is computed anyway");
        }
        Ok(AveragedMap { problem: problem.clone(), quad_n, frame_drift })
    }

    pub fn dim(&self) -> usize {
        let (m, s) = self.problem.dims();
        m + s
    }

    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        let (m, s) = self.problem.dims();
        if z.len() != m + s {
            return Err(Error::DimensionMismatch(format!("point of length {}, expected {}", z.len(), m + s)));
        }
        let (xi, eta) = z.split_at(m);
        let (a, b) = (self.problem.a(), self.problem.b());
        let zeros_m = vec![0.0; m];
        let zeros_s = vec![0.0; s];
        let mut out = quadrature_periodic(
            |t| {
                let at = a.eval(t, 0)?;
                let x = at.transpose().mul_vec(xi);
                let y = crate::densela::solve_linear(&b.eval(t, 0)?, eta)?;
                let f = self.problem.forcing(t, &x, &y, &zeros_m, &zeros_s)?;
                Ok(at.mul_vec(&f))
            },
            self.problem.period(),
            self.quad_n,
        )?;
        out.extend(self.problem.g().eval(xi, eta)?);
        Ok(out)
    }
}

/// Comparison of the quadrature-computed averaged map with a closed-form candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedMapAudit {
    pub quad_n: usize,
    pub frame_drift: f64,
    /// `(point, computed, printed)` triples
    pub probes: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    /// max difference between `quad_n` and `4 * quad_n` evaluations
    pub refinement_gap: f64,
    /// max difference between computed and printed values
    pub max_discrepancy: f64,
    pub agrees: bool,
}

/// Evaluates the averaged map at `probes` and compares with `printed`.
pub fn averaged_map_audit(
    problem: &DaeProblem,
    probes: &[Vec<f64>],
    quad_n: usize,
    printed: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<AveragedMapAudit> {
    let coarse = AveragedMap::new(problem, quad_n)?;
    let fine = AveragedMap::new(problem, 4 * quad_n)?;
    let mut rows = Vec::new();
    let mut gap = 0.0f64;
    let mut disc = 0.0f64;
    for p in probes {
        let v = coarse.eval(p)?;
        gap = gap.max(dist_inf(&v, &fine.eval(p)?));
        let w = printed(p);
        disc = disc.max(dist_inf(&v, &w));
        rows.push((p.clone(), v, w));
    }
    if disc > 1e-8 {
        log::info!("averaged map differs from the closed-form candidate by {disc:.3e}");
    }
    Ok(AveragedMapAudit {
        quad_n,
        frame_drift: coarse.frame_drift,
        probes: rows,
        refinement_gap: gap,
        max_discrepancy: disc,
        agrees: disc <= 1e-8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::probfile::Problem;
    use crate::transform::FnConstraint;

    fn scalar_g(f: fn(f64) -> f64) -> Arc<dyn Constraint> {
        Arc::new(FnConstraint::new(1, 1, Arc::new(move |p: &[f64], q: &[f64]| Ok(vec![f(q[0]) - p[0]]))))
    }

    fn rotating() -> TransformedSystem {
        match fixtures::load("rotating_surface").unwrap() {
            Problem::Dae(p) => p.transform().unwrap(),
            _ => panic!(),
        }
    }

    #[test]
    fn candidate_map_of_rotating_surface() {
        let map = candidate_map(&rotating()).unwrap();
        let z = [0.3, -0.7, 0.5];
        let v = map.eval(&z).unwrap();
        let expect = [-0.7, -0.3, 0.125 + 0.5 - 0.09 - 2.0 * 0.49];
        for i in 0..3 {
            assert!((v[i] - expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reduced_zero_examples() {
        let cube = |q: f64| q * q * q + q;
        let zs = zeros_of_reduced(scalar_g(cube).as_ref(), &BoxRegion::cube(1, 2.0), 9).unwrap();
        assert_eq!(zs.len(), 1);
        assert!(zs[0].point[0].abs() < 1e-12 && zs[0].sign == 1);
        let zs = zeros_of_reduced(scalar_g(|q| q).as_ref(), &BoxRegion::cube(1, 1.0), 9).unwrap();
        assert_eq!(zs.len(), 1);
        let zs = zeros_of_reduced(scalar_g(|q| q.powi(5) + q).as_ref(), &BoxRegion::cube(1, 2.0), 9).unwrap();
        assert_eq!((zs.len(), zs[0].sign), (1, 1));
    }

    #[test]
    fn degree_examples() {
        let map = candidate_map(&rotating()).unwrap();
        let bx = BoxRegion::cube(3, 2.0);
        let (r, g) = degree_both(&map, &bx, 9).unwrap();
        assert_eq!((r.degree, g.degree), (1, 1));
        assert!(r.boundary_margin > 0.0);

        let id = CandidateMap::new(Mat::identity(1), scalar_g(|q| q)).unwrap();
        assert_eq!(degree_reduced(&id, &BoxRegion::cube(2, 1.0), 9).unwrap().degree, 1);
        let ccw = CandidateMap::new(Mat::from_rows(&[[0.0, -1.0], [1.0, 0.0]]), {
            let g: Arc<dyn Constraint> =
                Arc::new(FnConstraint::new(2, 1, Arc::new(|p: &[f64], q: &[f64]| Ok(vec![q[0].powi(5) + q[0] - p[0]]))));
            g
        })
        .unwrap();
        assert_eq!(degree_reduced(&ccw, &BoxRegion::cube(3, 2.0), 9).unwrap().degree, 1);
    }

    #[test]
    fn generic_examples() {
        let f = |x: &[f64]| Ok(x.to_vec());
        for n in 1..=3 {
            assert_eq!(degree_generic(&f, None, &BoxRegion::cube(n, 1.0), 9).unwrap().degree, 1);
        }
        let cubic = |x: &[f64]| Ok(vec![x[0].powi(3)]);
        assert!(matches!(degree_generic(&cubic, None, &BoxRegion::cube(1, 1.0), 9), Err(Error::DegenerateZero { .. })));
        let three = |x: &[f64]| Ok(vec![x[0].powi(3) - x[0]]);
        let c = degree_generic(&three, None, &BoxRegion::cube(1, 2.0), 9).unwrap();
        let signs: Vec<i32> = c.zeros.iter().map(|z| z.sign).collect();
        assert_eq!(signs, vec![1, -1, 1]);
        assert_eq!(c.degree, 1);
    }

    #[test]
    fn boundary_zero_is_rejected() {
        let f = |x: &[f64]| Ok(vec![x[0] - 1.0]);
        assert!(matches!(degree_generic(&f, None, &BoxRegion::cube(1, 1.0), 9), Err(Error::BoundaryZero(_))));
    }

    #[test]
    fn averaged_map_trivial_cases() {
        let text = "kind = dae1\nm = 2\ns = 1\nperiod = 2*pi\n[f]\ncos(t)\nsin(t)\n[g]\nq - p1\n[A]\n1, 0\n0, 1\n[B]\n1\n";
        let Problem::Dae(p) = crate::probfile::parse_problem(text).unwrap().build().unwrap() else { panic!() };
        let w = AveragedMap::new(&p, 64).unwrap().eval(&[0.4, 0.1, 0.9]).unwrap();
        assert!(w[0].abs() < 1e-12 && w[1].abs() < 1e-12);
        assert!((w[2] - 0.5).abs() < 1e-15);
        let text = "kind = dae1\nm = 1\ns = 1\nperiod = 1\n[f]\nx*y + 2\n[g]\nq - p\n[A]\n1\n[B]\n1\n";
        let Problem::Dae(p) = crate::probfile::parse_problem(text).unwrap().build().unwrap() else { panic!() };
        let w = AveragedMap::new(&p, 16).unwrap().eval(&[3.0, 0.5]).unwrap();
        assert!((w[0] - 3.5).abs() < 1e-13 && (w[1] + 2.5).abs() < 1e-15);
    }
}
