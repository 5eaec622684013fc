//! Half-explicit RK4: the differential state advances with classical RK4 and the
//! algebraic variables are re-solved by Newton at every stage.

use crate::densela::{axpy, newton_solve, norm_inf, Lu, Mat, NewtonConfig};
use crate::error::{Error, Result};
use crate::transform::{pull_back, DaeProblem, Trajectory, TransformedSystem};

/// Which coordinates the integrator works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// original `(x, y)` with the moving constraint
    Raw,
    /// `(xi, eta)` with the autonomous constraint
    FixedFrame,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Raw => "raw",
            Mode::FixedFrame => "fixed-frame",
        }
    }
}

/// Tolerance for the algebraic solve at consistent initialization.
pub const INIT_TOL: f64 = 1e-12;

/// Algebraic Newton tolerances, scaled by the magnitude of the constraint arguments.
fn algebraic_newton(scale: f64) -> NewtonConfig {
    let scale = scale.max(1.0);
    NewtonConfig { max_iters: 50, tol_residual: 1e-13 * scale, tol_step: 1e-14 * scale, damping_min: 1.0 / 1024.0 }
}

/// A problem prepared for time stepping in one of the two coordinate systems.
#[derive(Clone, Debug)]
pub struct Flow {
    problem: DaeProblem,
    sys: Option<TransformedSystem>,
    mode: Mode,
}

impl Flow {
    pub fn new(problem: &DaeProblem, mode: Mode) -> Result<Flow> {
        problem.validate()?;
        let sys = match mode {
            Mode::Raw => None,
            Mode::FixedFrame => Some(problem.transform()?),
        };
        Ok(Flow { problem: problem.clone(), sys, mode })
    }

    pub fn problem(&self) -> &DaeProblem {
        &self.problem
    }

    pub fn system(&self) -> Option<&TransformedSystem> {
        self.sys.as_ref()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn order(&self) -> usize {
        self.problem.order()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.problem.dims()
    }

    pub fn period(&self) -> f64 {
        self.problem.period()
    }

    /// Length of the differential state: `m` or `2m`.
    pub fn state_len(&self) -> usize {
        self.dims().0 * self.order()
    }

    /// Constraint residual and its Jacobian in the algebraic unknown.
    fn algebraic(&self, t: f64, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Option<(Mat, Mat)>)> {
        let g = self.problem.g();
        match self.mode {
            Mode::FixedFrame => Ok((g.eval(x, y)?, None)),
            Mode::Raw => {
                let a = self.problem.a().eval(t, 0)?;
                let b = self.problem.b().eval(t, 0)?;
                Ok((g.eval(&a.mul_vec(x), &b.mul_vec(y))?, Some((a, b))))
            }
        }
    }

    /// Constraint residual `g(A x, B y)` or `g(xi, eta)`.
    pub fn constraint_residual(&self, t: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.algebraic(t, x, y)?.0)
    }

    /// Solves the constraint for the algebraic variables, starting from `y_guess`.
    pub fn solve_y(&self, t: f64, x: &[f64], y_guess: &[f64]) -> Result<Vec<f64>> {
        let g = self.problem.g();
        let (a, b) = match self.mode {
            Mode::FixedFrame => (None, None),
            Mode::Raw => (Some(self.problem.a().eval(t, 0)?), Some(self.problem.b().eval(t, 0)?)),
        };
        let p = a.as_ref().map_or_else(|| x.to_vec(), |a| a.mul_vec(x));
        let res = |y: &[f64]| match &b {
            None => g.eval(&p, y),
            Some(b) => g.eval(&p, &b.mul_vec(y)),
        };
        let jac = |y: &[f64]| match &b {
            None => g.jac_q(&p, y),
            Some(b) => Ok(g.jac_q(&p, &b.mul_vec(y))?.matmul(b)),
        };
        let scale = norm_inf(&p).max(norm_inf(y_guess));
        newton_solve(res, jac, y_guess, &algebraic_newton(scale)).map_err(|e| match e {
            Error::NoConvergence(msg) | Error::SingularJacobian(msg) => {
                Error::NoConvergence(format!("algebraic solve at t = {t}: {msg}"))
            }
            other => other,
        })
    }

    /// `y0` with `||g|| <= 1e-12 * max(1, ||x0||, ||y0||)` at `(t0, x0)`.
    pub fn consistent_init(&self, t0: f64, x0: &[f64], y_guess: &[f64]) -> Result<Vec<f64>> {
        let y = self.solve_y(t0, x0, y_guess)?;
        let r = norm_inf(&self.constraint_residual(t0, x0, &y)?);
        if r > INIT_TOL * norm_inf(x0).max(norm_inf(&y)).max(1.0) {
            return Err(Error::NoConvergence(format!("consistent initialization residual {r:.3e}")));
        }
        Ok(y)
    }

    /// Algebraic velocity from the differentiated constraint.
    fn algebraic_velocity(&self, t: f64, x: &[f64], v: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let g = self.problem.g();
        match self.mode {
            Mode::FixedFrame => {
                let rhs = g.jac_p(x, y)?.mul_vec(v);
                let lu = Lu::factor(&g.jac_q(x, y)?)?;
                Ok(lu.solve(&rhs).iter().map(|c| -c).collect())
            }
            Mode::Raw => {
                let a = self.problem.a().eval(t, 0)?;
                let da = self.problem.a().eval(t, 1)?;
                let b = self.problem.b().eval(t, 0)?;
                let db = self.problem.b().eval(t, 1)?;
                let (p, q) = (a.mul_vec(x), b.mul_vec(y));
                let dp: Vec<f64> = da.mul_vec(x).iter().zip(a.mul_vec(v)).map(|(u, w)| u + w).collect();
                let dq = Lu::factor(&g.jac_q(&p, &q)?)?.solve(&g.jac_p(&p, &q)?.mul_vec(&dp));
                let rhs: Vec<f64> = dq.iter().zip(db.mul_vec(y)).map(|(u, w)| -u - w).collect();
                Ok(Lu::factor(&b)?.solve(&rhs))
            }
        }
    }

    fn drift_terms(&self, t: f64, x: &[f64], v: Option<&[f64]>) -> Result<Vec<f64>> {
        let m = self.dims().0;
        let mut out = vec![0.0; m];
        let add = |out: &mut Vec<f64>, mat: &Mat, z: &[f64]| {
            mat.mul_vec(z).iter().zip(out.iter_mut()).for_each(|(a, o)| *o += a);
        };
        match (&self.sys, &self.problem) {
            (Some(sys), _) => {
                add(&mut out, &sys.drift0(t)?, x);
                if let Some(v) = v {
                    add(&mut out, &sys.drift1(t)?, v);
                }
            }
            (None, DaeProblem::First(p)) => {
                if let Some(h) = &p.h {
                    add(&mut out, h, x);
                }
            }
            (None, DaeProblem::Second(p)) => {
                if let Some(h1) = &p.h1 {
                    add(&mut out, h1, v.unwrap_or(&[]));
                }
                if let Some(h2) = &p.h2 {
                    add(&mut out, h2, x);
                }
            }
        }
        Ok(out)
    }

    /// Vector field on the differential state; updates `y` with the algebraic
    /// solution at this stage.
    fn field(&self, lambda: f64, t: f64, state: &[f64], y: &mut Vec<f64>) -> Result<Vec<f64>> {
        let m = self.dims().0;
        let s = self.dims().1;
        if self.order() == 1 {
            *y = self.solve_y(t, state, y)?;
            let mut dx = self.drift_terms(t, state, None)?;
            let f = match &self.sys {
                Some(sys) => sys.forcing(t, state, y, &[], &[])?,
                None => self.problem.forcing(t, state, y, &[], &[])?,
            };
            dx.iter_mut().zip(&f).for_each(|(d, fi)| *d += lambda * fi);
            return Ok(dx);
        }
        let (x, v) = state.split_at(m);
        *y = self.solve_y(t, x, y)?;
        let dy = if s > 0 { self.algebraic_velocity(t, x, v, y)? } else { vec![] };
        let mut acc = self.drift_terms(t, x, Some(v))?;
        let f = match &self.sys {
            Some(sys) => sys.forcing(t, x, y, v, &dy)?,
            None => self.problem.forcing(t, x, y, v, &dy)?,
        };
        acc.iter_mut().zip(&f).for_each(|(d, fi)| *d += lambda * fi);
        let mut out = v.to_vec();
        out.extend(acc);
        Ok(out)
    }

    /// Integrates from `t0` over `span` with `steps` uniform steps. The trajectory is
    /// in this flow's coordinates and holds every node.
    pub fn integrate(
        &self,
        lambda: f64,
        state0: &[f64],
        y_guess: &[f64],
        t0: f64,
        span: f64,
        steps: usize,
    ) -> Result<Trajectory> {
        let (m, s) = self.dims();
        if state0.len() != self.state_len() || y_guess.len() != s {
            return Err(Error::DimensionMismatch(format!(
                "initial state of length {} / {}, expected {} / {s}",
                state0.len(),
                y_guess.len(),
                self.state_len()
            )));
        }
        if steps == 0 || !(span.is_finite()) {
            return Err(Error::SchemaError("integration needs steps >= 1 and a finite span".into()));
        }
        let h = span / steps as f64;
        let mut state = state0.to_vec();
        let mut y = self.consistent_init(t0, &state[..m], y_guess)?;
        let mut traj = Trajectory { t: vec![], x: vec![], y: vec![], dx: None, dy: None };
        let second = self.order() == 2;
        let (mut dxs, mut dys) = (Vec::new(), Vec::new());
        let mut record = |traj: &mut Trajectory, t: f64, state: &[f64], y: &[f64]| -> Result<()> {
            traj.t.push(t);
            traj.x.push(state[..m].to_vec());
            traj.y.push(y.to_vec());
            if second {
                dxs.push(state[m..].to_vec());
                dys.push(self.algebraic_velocity(t, &state[..m], &state[m..], y)?);
            }
            Ok(())
        };
        record(&mut traj, t0, &state, &y)?;
        for k in 0..steps {
            let t = t0 + k as f64 * h;
            let mut ys = y.clone();
            let k1 = self.field(lambda, t, &state, &mut ys)?;
            let k2 = self.field(lambda, t + 0.5 * h, &axpy(&state, 0.5 * h, &k1), &mut ys)?;
            let k3 = self.field(lambda, t + 0.5 * h, &axpy(&state, 0.5 * h, &k2), &mut ys)?;
            let k4 = self.field(lambda, t + h, &axpy(&state, h, &k3), &mut ys)?;
            for i in 0..state.len() {
                state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if state.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonfiniteResult(format!("state blew up at t = {}", t + h)));
            }
            let t_next = t0 + (k + 1) as f64 * h;
            y = self.solve_y(t_next, &state[..m], &ys)?;
            record(&mut traj, t_next, &state, &y)?;
        }
        if second {
            traj.dx = Some(dxs);
            traj.dy = Some(dys);
        }
        Ok(traj)
    }

    /// The trajectory in original coordinates.
    pub fn to_original(&self, traj: &Trajectory) -> Result<Trajectory> {
        match self.mode {
            Mode::Raw => Ok(traj.clone()),
            Mode::FixedFrame => pull_back(traj, self.problem.a(), self.problem.b()),
        }
    }

    /// max over nodes of `||g(A x, B y)||` for a trajectory in original coordinates.
    pub fn max_constraint_residual(&self, original: &Trajectory) -> Result<f64> {
        let g = self.problem.g();
        let mut worst = 0.0f64;
        for (k, &t) in original.t.iter().enumerate() {
            let p = self.problem.a().eval(t, 0)?.mul_vec(&original.x[k]);
            let q = self.problem.b().eval(t, 0)?.mul_vec(&original.y[k]);
            worst = worst.max(norm_inf(&g.eval(&p, &q)?));
        }
        Ok(worst)
    }
}
