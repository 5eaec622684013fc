//! Shooting for periodic solutions and pseudo-arclength continuation in `lambda`.

use crate::degree::{candidate_map, find_zeros, AveragedMap, BoxRegion, STATIC_FRAME_TOL};
use crate::densela::{central_jacobian, dot, fd_jacobian, norm2, norm_inf, pseudo_solve, Lu, Mat};
use crate::error::{Error, Result};
use crate::transform::Trajectory;

use super::integrate::{Flow, Mode};

/// Default RK4 steps per period.
pub const DEFAULT_STEPS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingConfig {
    pub steps: usize,
    /// Newton tolerance on `||state(T) - state(0)||_inf`
    pub tol_newton: f64,
    /// acceptance bound on the periodicity residual in original coordinates
    pub tol_periodic: f64,
    /// acceptance bound on the constraint residual at every node
    pub tol_constraint: f64,
    pub max_iters: usize,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        ShootingConfig { steps: DEFAULT_STEPS, tol_newton: 1e-10, tol_periodic: 1e-8, tol_constraint: 1e-10, max_iters: 30 }
    }
}

/// A verified periodic solution.
#[derive(Debug, Clone)]
pub struct TPair {
    pub lambda: f64,
    /// initial differential state in flow coordinates (`xi0`, or `(xi0, u0)`)
    pub state0: Vec<f64>,
    pub eta0: Vec<f64>,
    /// one period in original coordinates
    pub trajectory: Trajectory,
    pub periodicity_residual: f64,
    pub constraint_residual: f64,
    pub trivial: bool,
}

impl TPair {
    pub fn sup_norm_x(&self) -> f64 {
        self.trajectory.x.iter().map(|v| norm_inf(v)).fold(0.0, f64::max)
    }

    pub fn sup_norm_y(&self) -> f64 {
        self.trajectory.y.iter().map(|v| norm_inf(v)).fold(0.0, f64::max)
    }
}

/// Outcome of one shooting evaluation.
#[derive(Debug, Clone)]
pub struct Shot {
    /// `state(T) - state(0)`
    pub residual: Vec<f64>,
    /// `eta(T) - eta(0)`
    pub eta_gap: Vec<f64>,
    pub trajectory: Trajectory,
}

/// Integrates one period from `z` and reports the periodicity defects.
pub fn shooting_residual(flow: &Flow, lambda: f64, z: &[f64], eta_guess: &[f64], steps: usize) -> Result<Shot> {
    let traj = flow.integrate(lambda, z, eta_guess, 0.0, flow.period(), steps)?;
    let last = traj.len() - 1;
    let m = flow.dims().0;
    let mut residual: Vec<f64> = (0..m).map(|i| traj.x[last][i] - traj.x[0][i]).collect();
    if let Some(dx) = &traj.dx {
        residual.extend((0..m).map(|i| dx[last][i] - dx[0][i]));
    }
    let eta_gap = traj.y[last].iter().zip(&traj.y[0]).map(|(a, b)| a - b).collect();
    Ok(Shot { residual, eta_gap, trajectory: traj })
}

fn shoot(flow: &Flow, lambda: f64, z: &[f64], eta_guess: &[f64], steps: usize) -> Result<Vec<f64>> {
    Ok(shooting_residual(flow, lambda, z, eta_guess, steps)?.residual)
}

/// Newton with a forward-difference Jacobian. Singular Jacobians fall back to the
/// minimum-norm step when `allow_pinv` is set, otherwise they are reported as
/// `SingularMonodromy`.
fn shooting_newton(
    res: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    x0: &[f64],
    tol: f64,
    max_iters: usize,
    allow_pinv: bool,
) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut r = res(&x)?;
    let mut rn = norm_inf(&r);
    for _ in 0..max_iters {
        if rn <= tol {
            return Ok(x);
        }
        let jac = fd_jacobian(res, &x, &r)?;
        let dx = match Lu::factor(&jac) {
            Ok(lu) => lu.solve(&r),
            Err(_) if allow_pinv => pseudo_solve(&jac, &r, 1e-10)?,
            Err(e) => return Err(Error::SingularMonodromy(e.to_string())),
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a - alpha * d).collect();
            if let Ok(rt) = res(&trial) {
                let tn = norm_inf(&rt);
                if tn.is_finite() && tn < rn {
                    x = trial;
                    r = rt;
                    rn = tn;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if rn <= tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence(format!("shooting residual {rn:.3e} > {tol:.1e}")))
    }
}

/// Integrates from a converged initial state and checks both acceptance bounds.
pub fn verify_pair(flow: &Flow, lambda: f64, z: &[f64], eta_guess: &[f64], cfg: &ShootingConfig) -> Result<TPair> {
    let shot = shooting_residual(flow, lambda, z, eta_guess, cfg.steps)?;
    let orig = flow.to_original(&shot.trajectory)?;
    let last = orig.len() - 1;
    let gap = |v: &[Vec<f64>]| dist(&v[last], &v[0]);
    let mut periodicity = gap(&orig.x).max(gap(&orig.y));
    if let (Some(dx), Some(dy)) = (&orig.dx, &orig.dy) {
        periodicity = periodicity.max(gap(dx)).max(gap(dy));
    }
    let constraint = flow.max_constraint_residual(&orig)?;
    if periodicity > cfg.tol_periodic || constraint > cfg.tol_constraint {
        return Err(Error::NoConvergence(format!(
            "candidate at lambda = {lambda} has periodicity residual {periodicity:.3e} and constraint residual {constraint:.3e}"
        )));
    }
    let first = (orig.x[0].clone(), orig.y[0].clone());
    let trivial = lambda == 0.0
        && orig.x.iter().all(|x| dist(x, &first.0) <= 1e-9)
        && orig.y.iter().all(|y| dist(y, &first.1) <= 1e-9);
    Ok(TPair {
        lambda,
        state0: z.to_vec(),
        eta0: shot.trajectory.y[0].clone(),
        trajectory: orig,
        periodicity_residual: periodicity,
        constraint_residual: constraint,
        trivial,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Periodic solution at fixed `lambda` by single shooting from `guess`.
pub fn find_tpair(flow: &Flow, lambda: f64, guess: &[f64], eta_guess: &[f64], cfg: &ShootingConfig) -> Result<TPair> {
    let res = |z: &[f64]| shoot(flow, lambda, z, eta_guess, cfg.steps);
    let z = shooting_newton(&res, guess, cfg.tol_newton, cfg.max_iters, false)?;
    verify_pair(flow, lambda, &z, eta_guess, cfg)
}

// ---------------------------------------------------------------------------
// Continuation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Completed,
    /// the corrector produced `lambda < 0`
    LambdaBoundary,
    /// `(xi0, eta0)` left the search box
    LeftBox,
    SolverFailure(String),
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::LambdaBoundary => "lambda_boundary",
            Termination::LeftBox => "left_box",
            Termination::SolverFailure(_) => "solver_failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    /// `(xi, eta)` zero the branch emanates from
    pub seed: Vec<f64>,
    /// pairs in continuation order, starting with the trivial pair at `lambda = 0`
    pub pairs: Vec<TPair>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationConfig {
    pub ds: f64,
    pub max_steps: usize,
    pub shooting: ShootingConfig,
    /// stop when `(xi0, eta0)` leaves this box
    pub bounds: Option<BoxRegion>,
    pub max_halvings: usize,
    /// step of the central differences used for the tangent
    pub tangent_h: f64,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            ds: 0.05,
            max_steps: 40,
            shooting: ShootingConfig::default(),
            bounds: None,
            max_halvings: 3,
            tangent_h: 1e-5,
        }
    }
}

/// Map whose zeros seed branches: the candidate map, or the averaged map when the
/// frame does not rotate and there is no drift.
pub enum SeedMap {
    Candidate(crate::degree::CandidateMap),
    Averaged(AveragedMap),
}

impl SeedMap {
    pub fn for_flow(flow: &Flow) -> Result<SeedMap> {
        let sys = flow
            .system()
            .ok_or_else(|| Error::SchemaError("branch seeds are defined in fixed-frame coordinates".into()))?;
        if !sys.problem.has_drift() && sys.audit.m.norm_inf() <= STATIC_FRAME_TOL {
            Ok(SeedMap::Averaged(AveragedMap::new(flow.problem(), 64)?))
        } else {
            Ok(SeedMap::Candidate(candidate_map(sys)?))
        }
    }

    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            SeedMap::Candidate(c) => c.eval(z),
            SeedMap::Averaged(a) => a.eval(z),
        }
    }

    pub fn is_averaged(&self) -> bool {
        matches!(self, SeedMap::Averaged(_))
    }
}

/// A regular zero of the seed map.
#[derive(Debug, Clone, PartialEq)]
pub struct Seed {
    pub point: Vec<f64>,
    pub sign: i32,
}

/// Regular zeros of the seed map inside `bx`.
pub fn branch_seeds(flow: &Flow, bx: &BoxRegion, seeds_per_axis: usize) -> Result<Vec<Seed>> {
    let map = SeedMap::for_flow(flow)?;
    let f = |z: &[f64]| map.eval(z);
    let jac = |z: &[f64]| -> Result<Mat> {
        match &map {
            SeedMap::Candidate(c) => c.jacobian(z),
            SeedMap::Averaged(_) => {
                let fz = f(z)?;
                fd_jacobian(&f, z, &fz)
            }
        }
    };
    Ok(find_zeros(&f, &jac, bx, seeds_per_axis)?.into_iter().map(|z| Seed { point: z.point, sign: z.sign }).collect())
}

/// Accepts `seed` if the seed map vanishes there to `1e-8`.
pub fn check_seed(flow: &Flow, seed: &[f64]) -> Result<()> {
    let (m, s) = flow.dims();
    if seed.len() != m + s {
        return Err(Error::DimensionMismatch(format!("seed of length {}, expected {}", seed.len(), m + s)));
    }
    let r = norm_inf(&SeedMap::for_flow(flow)?.eval(seed)?);
    if r > 1e-8 {
        return Err(Error::SeedRejected(format!("seed map residual {r:.3e} at {seed:?}")));
    }
    Ok(())
}

/// Traces the branch of periodic solutions emanating from `seed` at `lambda = 0`.
pub fn continue_branch(flow: &Flow, seed: &[f64], cfg: &ContinuationConfig) -> Result<Branch> {
    if flow.mode() != Mode::FixedFrame {
        return Err(Error::SchemaError("continuation runs in fixed-frame coordinates".into()));
    }
    if !(cfg.ds > 0.0) {
        return Err(Error::SchemaError(format!("arclength step must be positive, got {}", cfg.ds)));
    }
    check_seed(flow, seed)?;
    let (m, _) = flow.dims();
    let mut z0 = seed[..m].to_vec();
    if flow.order() == 2 {
        z0.extend(vec![0.0; m]);
    }
    let eta0 = seed[m..].to_vec();
    let sh = &cfg.shooting;
    let pair0 = verify_pair(flow, 0.0, &z0, &eta0, sh)?;
    let mut branch = Branch { seed: seed.to_vec(), pairs: vec![pair0], termination: Termination::Completed };

    // first step in lambda only
    let mut ds = cfg.ds;
    let mut first = None;
    let mut last_err = String::new();
    for _ in 0..=cfg.max_halvings {
        let res = |z: &[f64]| shoot(flow, ds, z, &eta0, sh.steps);
        match shooting_newton(&res, &z0, sh.tol_newton, sh.max_iters, true)
            .and_then(|z| verify_pair(flow, ds, &z, &eta0, sh))
        {
            Ok(p) => {
                first = Some(p);
                break;
            }
            Err(e) => {
                last_err = e.to_string();
                ds *= 0.5;
            }
        }
    }
    let Some(p1) = first else {
        branch.termination = Termination::SolverFailure(last_err);
        return Ok(branch);
    };
    if let Some(t) = boundary_check(cfg, &p1, m) {
        branch.termination = t;
        return Ok(branch);
    }
    let w_of = |p: &TPair| {
        let mut w = vec![p.lambda];
        w.extend(&p.state0);
        w
    };
    let mut tangent = {
        let d: Vec<f64> = w_of(&p1).iter().zip(w_of(&branch.pairs[0])).map(|(a, b)| a - b).collect();
        let n = norm2(&d);
        d.iter().map(|v| v / n).collect::<Vec<f64>>()
    };
    branch.pairs.push(p1);

    while branch.pairs.len() < cfg.max_steps + 1 {
        let cur = branch.pairs.last().unwrap().clone();
        let w = w_of(&cur);
        let eta = cur.eta0.clone();
        let full = |w: &[f64]| shoot(flow, w[0], &w[1..], &eta, sh.steps);
        tangent = match branch_tangent(&full, &w, &tangent, cfg.tangent_h) {
            Ok(t) => t,
            Err(e) => {
                branch.termination = Termination::SolverFailure(e.to_string());
                return Ok(branch);
            }
        };
        let mut ds = cfg.ds;
        let mut next = None;
        for _ in 0..=cfg.max_halvings {
            let pred: Vec<f64> = w.iter().zip(&tangent).map(|(a, b)| a + ds * b).collect();
            let tan = tangent.clone();
            let corrector = |v: &[f64]| -> Result<Vec<f64>> {
                let mut r = full(v)?;
                r.push(v.iter().zip(&pred).zip(&tan).map(|((a, b), t)| (a - b) * t).sum());
                Ok(r)
            };
            match shooting_newton(&corrector, &pred, sh.tol_newton, sh.max_iters, true) {
                Ok(v) if v[0] < 0.0 => {
                    branch.termination = Termination::LambdaBoundary;
                    return Ok(branch);
                }
                Ok(v) => match verify_pair(flow, v[0], &v[1..], &eta, sh) {
                    Ok(p) => {
                        next = Some(p);
                        break;
                    }
                    Err(e) => last_err = e.to_string(),
                },
                Err(e) => last_err = e.to_string(),
            }
            ds *= 0.5;
        }
        let Some(p) = next else {
            branch.termination = Termination::SolverFailure(last_err);
            return Ok(branch);
        };
        if let Some(t) = boundary_check(cfg, &p, m) {
            branch.termination = t;
            return Ok(branch);
        }
        branch.pairs.push(p);
    }
    Ok(branch)
}

fn boundary_check(cfg: &ContinuationConfig, p: &TPair, m: usize) -> Option<Termination> {
    if p.lambda < 0.0 {
        return Some(Termination::LambdaBoundary);
    }
    let bx = cfg.bounds.as_ref()?;
    let mut pt = p.state0[..m].to_vec();
    pt.extend(&p.eta0);
    (!bx.contains(&pt)).then_some(Termination::LeftBox)
}

/// Unit null vector of the `k x (k+1)` shooting Jacobian, oriented along `prev`.
fn branch_tangent(
    full: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    w: &[f64],
    prev: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let j = central_jacobian(full, w, h)?;
    let k = j.rows();
    let mut aug = Mat::zeros(k + 1, k + 1);
    aug.set_block(0, 0, &j);
    for (c, v) in prev.iter().enumerate() {
        aug[(k, c)] = *v;
    }
    let mut rhs = vec![0.0; k + 1];
    rhs[k] = 1.0;
    let t = match Lu::factor(&aug) {
        Ok(lu) => lu.solve(&rhs),
        Err(_) => pseudo_solve(&aug, &rhs, 1e-10)?,
    };
    let n = norm2(&t);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::SingularJacobian("branch tangent is undefined".into()));
    }
    let sign = if dot(&t, prev) < 0.0 { -1.0 } else { 1.0 };
    Ok(t.iter().map(|v| sign * v / n).collect())
}
