use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mfdae::degree::{averaged_map_audit, candidate_map, degree_generic, degree_reduced, BoxRegion, DEFAULT_SEEDS};
use mfdae::matpath::{frame_audit, lemma_audit, random_orthogonal, random_skew, MatrixPath, DEFAULT_GRID};
use mfdae::periodic::{branch_seeds, continue_branch, ContinuationConfig, Flow, Mode, ShootingConfig, DEFAULT_STEPS};
use mfdae::probfile::serialize::{
    averaged_audit_json, branch_csv, branch_trajectories_json, degree_json, frame_audit_json, lemma_report_json,
    reduction_report_json, to_json_string, trajectory_json,
};
use mfdae::probfile::{parse_problem, Problem};
use mfdae::slred::reduce;
use mfdae::transform::DaeProblem;
use mfdae::{fixtures, Error};

/// Periodic solutions of parametrized DAEs with constraints moving through
/// orthogonal frames.
#[derive(Parser, Debug)]
#[command(name = "mfdae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Audit the frame hypotheses of A and B and print the drift matrices
    Check(CommonArgs),
    /// Check the matrix identities on built-in and random exponential-frame paths
    Lemmas(LemmaArgs),
    /// Brouwer degree of the branch-seeding map on a box
    Degree(DegreeArgs),
    /// SVD reduction of a semi-linear problem to the constraint form
    Reduce(CommonArgs),
    /// Integrate one or more periods at fixed lambda
    Integrate(IntegrateArgs),
    /// Trace a branch of periodic solutions from lambda = 0
    Continue(ContinueArgs),
    /// List the built-in problems, or print one of them
    Fixtures {
        /// fixture to print
        name: Option<String>,
    },
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// problem file path or built-in fixture name
    problem: String,
    /// audit grid size
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    /// audit tolerance (default depends on the derivative mode)
    #[arg(long)]
    tol: Option<f64>,
    /// use finite-difference path derivatives with this step
    #[arg(long)]
    h: Option<f64>,
    /// write the output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LemmaArgs {
    /// audit grid size
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    /// precondition tolerance
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// seed for the random paths
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// number of random paths
    #[arg(long, default_value_t = 50)]
    count: usize,
    /// write the output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Reduced,
    Generic,
    Both,
}

#[derive(Args, Debug)]
struct DegreeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// degree method
    #[arg(long, value_enum, default_value_t = Method::Both)]
    method: Method,
    /// half-width of the box centred at the origin
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
    /// Newton seeds per axis
    #[arg(long, default_value_t = DEFAULT_SEEDS)]
    seeds: usize,
}

#[derive(Args, Debug)]
#[group(multiple = false)]
struct ModeArgs {
    /// integrate in original coordinates
    #[arg(long)]
    raw: bool,
    /// integrate in fixed-frame coordinates (default)
    #[arg(long)]
    fixed_frame: bool,
}

impl ModeArgs {
    fn mode(&self) -> Mode {
        if self.raw {
            Mode::Raw
        } else {
            Mode::FixedFrame
        }
    }
}

#[derive(Args, Debug)]
struct IntegrateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    mode: ModeArgs,
    /// parameter value
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// RK4 steps per period
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    /// number of periods
    #[arg(long, default_value_t = 1)]
    periods: usize,
    /// initial differential state, comma separated (x, or x then x' for second order)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// initial guess for the algebraic variables, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    y0: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct ContinueArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// arclength step
    #[arg(long, default_value_t = 0.05)]
    ds: f64,
    /// number of continuation steps
    #[arg(long, default_value_t = 40)]
    steps: usize,
    /// RK4 steps per period inside the shooting
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    rk_steps: usize,
    /// half-width of the seed and continuation box
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
    /// which seed (in sorted order) to continue from
    #[arg(long, default_value_t = 0)]
    branch: usize,
    /// also dump every pair's trajectory as JSON here
    #[arg(long)]
    trajectories: Option<PathBuf>,
}

/// Failures with the exit code they map to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure { code: if e.is_usage() { 2 } else { 1 }, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn violation(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Check(a) => check(&a),
        Command::Lemmas(a) => lemmas(&a),
        Command::Degree(a) => degree(&a),
        Command::Reduce(a) => reduce_cmd(&a),
        Command::Integrate(a) => integrate(&a),
        Command::Continue(a) => continue_cmd(&a),
        Command::Fixtures { name } => fixtures_cmd(name.as_deref()),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Outcome {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            stdout(text);
            Ok(())
        }
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn stdout(text: &str) {
    if let Err(e) = io::stdout().lock().write_all(text.as_bytes()) {
        if e.kind() != io::ErrorKind::BrokenPipe {
            eprintln!("error: cannot write to stdout: {e}");
        }
    }
}

impl CommonArgs {
    fn validate(&self) -> Outcome {
        if self.grid < 8 {
            return Err(usage(format!("--grid must be at least 8, got {}", self.grid)));
        }
        if let Some(t) = self.tol {
            if !(t > 0.0 && t < 1.0) {
                return Err(usage(format!("--tol must lie in (0, 1), got {t}")));
            }
        }
        if let Some(h) = self.h {
            if !(h > 0.0 && h < 1.0) {
                return Err(usage(format!("--h must lie in (0, 1), got {h}")));
            }
        }
        Ok(())
    }

    fn load(&self) -> std::result::Result<Problem, Failure> {
        self.validate()?;
        let text = if fixtures::names().contains(&self.problem.as_str()) {
            fixtures::text(&self.problem)?.to_string()
        } else {
            fs::read_to_string(&self.problem)
                .map_err(|e| usage(format!("'{}' is neither a fixture nor a readable file: {e}", self.problem)))?
        };
        let mut spec = parse_problem(&text)?;
        if self.h.is_some() {
            spec.fd_derivatives = true;
        }
        let problem = spec.build()?;
        Ok(match (problem, self.h) {
            (Problem::Dae(p), Some(h)) => Problem::Dae(with_fd_step(p, h)),
            (p, _) => p,
        })
    }

    /// The problem as a constraint DAE; semi-linear problems are reduced first.
    fn load_dae(&self) -> std::result::Result<DaeProblem, Failure> {
        match self.load()? {
            Problem::Dae(p) => Ok(p),
            Problem::SemiLinear(s) => Ok(DaeProblem::First(reduce(&s)?.problem)),
        }
    }

    fn tol_for(&self, path: &MatrixPath) -> f64 {
        self.tol.unwrap_or_else(|| path.default_tol())
    }
}

fn with_fd_step(p: DaeProblem, h: f64) -> DaeProblem {
    match p {
        DaeProblem::First(mut q) => {
            q.a = q.a.with_fd(Some(h));
            q.b = q.b.with_fd(Some(h));
            DaeProblem::First(q)
        }
        DaeProblem::Second(mut q) => {
            q.a = q.a.with_fd(Some(h));
            q.b = q.b.with_fd(Some(h));
            DaeProblem::Second(q)
        }
    }
}

fn check(a: &CommonArgs) -> Outcome {
    let p = a.load_dae()?;
    let audit_a = frame_audit(p.a(), a.grid, a.tol_for(p.a()))?;
    let audit_b = frame_audit(p.b(), a.grid, a.tol_for(p.b()))?;
    let holds = audit_a.holds() && audit_b.orthogonal;
    let mut obj = serde_json::Map::new();
    obj.insert("problem".into(), p.name().into());
    obj.insert("order".into(), p.order().into());
    obj.insert("A".into(), frame_audit_json(p.a().label(), &audit_a));
    obj.insert("B".into(), frame_audit_json(p.b().label(), &audit_b));
    if audit_a.holds() {
        let sys = p.transform()?;
        obj.insert("exact_drift".into(), sys.exact_drift.into());
        obj.insert("commutation_residual".into(), json_num(sys.commutation_residual));
        obj.insert("D0".into(), mat_value(&sys.d0));
        if let Some(d1) = &sys.d1 {
            obj.insert("D1".into(), mat_value(d1));
        }
    }
    emit(&a.out, &to_json_string(&serde_json::Value::Object(obj)))?;
    if holds {
        Ok(())
    } else {
        Err(violation("frame hypotheses do not hold"))
    }
}

fn json_num(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

fn mat_value(m: &mfdae::densela::Mat) -> serde_json::Value {
    serde_json::Value::Array(m.to_rows().into_iter().map(|r| r.into_iter().map(json_num).collect()).collect())
}

fn lemmas(a: &LemmaArgs) -> Outcome {
    if a.grid < 8 {
        return Err(usage(format!("--grid must be at least 8, got {}", a.grid)));
    }
    if !(a.tol > 0.0 && a.tol < 1.0) {
        return Err(usage(format!("--tol must lie in (0, 1), got {}", a.tol)));
    }
    let mut paths: Vec<(String, MatrixPath)> = vec![
        ("rot2".into(), MatrixPath::rot2()),
        ("rot2cw".into(), MatrixPath::rot2cw()),
        ("counterexample4".into(), MatrixPath::counterexample4()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for k in 0..a.count {
        let n = 2 + k % 5;
        let s = random_skew(&mut rng, n, 1.0);
        let a0 = random_orthogonal(&mut rng, n);
        paths.push((format!("exp_frame_{k}_n{n}"), MatrixPath::exp_frame(s, a0, 2.0 * std::f64::consts::PI)));
    }
    let mut reports = Vec::new();
    let mut worst = 0.0f64;
    for (label, path) in &paths {
        let r = lemma_audit(path, a.grid, a.tol, false)?;
        if r.preconditions_hold {
            worst = worst.max(r.max_identity_residual());
        }
        reports.push(lemma_report_json(label, &r));
    }
    let value = serde_json::json!({
        "seed": a.seed,
        "max_identity_residual": json_num(worst),
        "paths": reports,
    });
    emit(&a.out, &to_json_string(&value))?;
    if worst > a.tol {
        return Err(violation(format!("identity residual {worst:.3e} exceeds {:.1e}", a.tol)));
    }
    Ok(())
}

fn degree(a: &DegreeArgs) -> Outcome {
    let c = &a.common;
    if !(a.radius > 0.0) {
        return Err(usage(format!("--radius must be positive, got {}", a.radius)));
    }
    if a.seeds < 2 || a.seeds > 50 {
        return Err(usage(format!("--seeds must lie in 2..=50, got {}", a.seeds)));
    }
    let loaded = c.load()?;
    let semilinear = matches!(loaded, Problem::SemiLinear(_));
    let p = c.load_dae()?;
    let sys = p.transform()?;
    let map = candidate_map(&sys)?;
    let (m, s) = p.dims();
    let bx = BoxRegion::cube(m + s, a.radius);
    let mut certs = Vec::new();
    if matches!(a.method, Method::Reduced | Method::Both) {
        certs.push(degree_json(p.name(), &degree_reduced(&map, &bx, a.seeds)?));
    }
    if matches!(a.method, Method::Generic | Method::Both) {
        let f = |z: &[f64]| map.eval(z);
        let j = |z: &[f64]| map.jacobian(z);
        certs.push(degree_json(p.name(), &degree_generic(&f, Some(&j), &bx, a.seeds)?));
    }
    let mut obj = serde_json::Map::new();
    obj.insert("problem".into(), p.name().into());
    obj.insert("radius".into(), json_num(a.radius));
    obj.insert("certificates".into(), serde_json::Value::Array(certs));
    if semilinear && m == 2 && s == 2 {
        let probes: Vec<Vec<f64>> =
            vec![vec![0.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0], vec![0.3, -0.2, 0.5, 0.1], vec![-0.4, 0.7, -0.6, 0.2]];
        let printed = |z: &[f64]| vec![z[2], 3.0 * z[2] + 2.0 * z[3], z[0] + z[2], z[1] + z[3]];
        let audit = averaged_map_audit(&p, &probes, 64, &printed)?;
        obj.insert("averaged_map".into(), averaged_audit_json(p.name(), &audit));
    }
    emit(&c.out, &to_json_string(&serde_json::Value::Object(obj)))
}

fn reduce_cmd(a: &CommonArgs) -> Outcome {
    let Problem::SemiLinear(dae) = a.load()? else {
        return Err(usage("reduce expects a semilinear problem"));
    };
    let red = reduce(&dae)?;
    let text = red.spec.to_text();
    let mut value = reduction_report_json(&dae.name, &red.report, red.frame_suitable);
    value["reduced_problem"] = serde_json::Value::String(text.clone());
    match &a.out {
        Some(path) => {
            fs::write(path, &text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
            stdout(&to_json_string(&value));
        }
        None => stdout(&to_json_string(&value)),
    }
    Ok(())
}

fn integrate(a: &IntegrateArgs) -> Outcome {
    let c = &a.common;
    if a.steps == 0 || a.periods == 0 {
        return Err(usage("--steps and --periods must be positive"));
    }
    if !a.lambda.is_finite() || a.lambda < 0.0 {
        return Err(usage(format!("--lambda must be finite and nonnegative, got {}", a.lambda)));
    }
    let p = c.load_dae()?;
    let flow = Flow::new(&p, a.mode.mode())?;
    let (_, s) = p.dims();
    let x0 = a.x0.clone().unwrap_or_else(|| vec![0.0; flow.state_len()]);
    let y0 = a.y0.clone().unwrap_or_else(|| vec![0.0; s]);
    if x0.len() != flow.state_len() || y0.len() != s {
        return Err(usage(format!("--x0 needs {} and --y0 {s} components", flow.state_len())));
    }
    // initial data are given in original coordinates
    let (start, guess) = match flow.mode() {
        Mode::Raw => (x0, y0),
        Mode::FixedFrame => {
            let a0 = p.a().eval(0.0, 0)?;
            let b0 = p.b().eval(0.0, 0)?;
            let m = p.dims().0;
            let mut xi = a0.mul_vec(&x0[..m]);
            if p.order() == 2 {
                let da0 = p.a().eval(0.0, 1)?;
                let u: Vec<f64> = a0.mul_vec(&x0[m..]).iter().zip(da0.mul_vec(&x0[..m])).map(|(x, y)| x + y).collect();
                xi.extend(u);
            }
            (xi, b0.mul_vec(&y0))
        }
    };
    let span = p.period() * a.periods as f64;
    let traj = flow.integrate(a.lambda, &start, &guess, 0.0, span, a.steps * a.periods)?;
    let orig = flow.to_original(&traj)?;
    emit(&c.out, &to_json_string(&trajectory_json(p.name(), a.lambda, flow.mode().as_str(), &orig)))
}

fn continue_cmd(a: &ContinueArgs) -> Outcome {
    let c = &a.common;
    if !(a.ds > 0.0 && a.ds <= 1.0) {
        return Err(usage(format!("--ds must lie in (0, 1], got {}", a.ds)));
    }
    if a.steps == 0 || a.rk_steps < 8 {
        return Err(usage("--steps must be positive and --rk-steps at least 8"));
    }
    if !(a.radius > 0.0) {
        return Err(usage(format!("--radius must be positive, got {}", a.radius)));
    }
    let p = c.load_dae()?;
    let flow = Flow::new(&p, Mode::FixedFrame)?;
    let (m, s) = p.dims();
    let bx = BoxRegion::cube(m + s, a.radius);
    let seeds = branch_seeds(&flow, &bx, DEFAULT_SEEDS)?;
    let seed = seeds.get(a.branch).ok_or_else(|| {
        violation(format!("requested seed {} but the seed map has {} zeros in the box", a.branch, seeds.len()))
    })?;
    let cfg = ContinuationConfig {
        ds: a.ds,
        max_steps: a.steps,
        shooting: ShootingConfig { steps: a.rk_steps, ..ShootingConfig::default() },
        bounds: Some(bx),
        ..ContinuationConfig::default()
    };
    let branch = continue_branch(&flow, &seed.point, &cfg)?;
    log::info!("branch terminated: {:?}", branch.termination);
    emit(&c.out, &branch_csv(m, p.order(), &branch.pairs))?;
    if let Some(path) = &a.trajectories {
        fs::write(path, to_json_string(&branch_trajectories_json(p.name(), &branch)))
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn fixtures_cmd(name: Option<&str>) -> Outcome {
    match name {
        Some(n) => {
            stdout(fixtures::text(n)?);
        }
        None => {
            let lines: String = fixtures::list().iter().map(|(n, summary)| format!("{n:<22} {summary}\n")).collect();
            stdout(&lines);
        }
    }
    Ok(())
}
