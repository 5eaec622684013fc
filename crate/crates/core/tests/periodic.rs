use mfdae::fixtures;
use mfdae::periodic::{branch_seeds, continue_branch, find_tpair, ContinuationConfig, Flow, Mode, ShootingConfig, Termination};
use mfdae::probfile::{parse_problem, Problem};
use mfdae::transform::DaeProblem;
use mfdae::degree::BoxRegion;
use mfdae::Error;

fn dae(name: &str) -> DaeProblem {
    match fixtures::load(name).unwrap() {
        Problem::Dae(p) => p,
        _ => panic!("{name} is not a DAE"),
    }
}

fn scalar_closed_form(lambda: f64, x0: f64, t: f64) -> f64 {
    let l2 = lambda * lambda;
    let c = x0 - l2 / (1.0 + l2);
    lambda * (lambda * t.cos() + t.sin()) / (1.0 + l2) + c * (-lambda * t).exp()
}

#[test]
fn scalar_tpair_matches_closed_form() {
    let flow = Flow::new(&dae("scalar_linear"), Mode::FixedFrame).unwrap();
    let pair = find_tpair(&flow, 1.0, &[0.0], &[0.0], &ShootingConfig::default()).unwrap();
    assert!((pair.state0[0] - 0.5).abs() < 1e-8);
    for (k, &t) in pair.trajectory.t.iter().enumerate() {
        let x = pair.trajectory.x[k][0];
        assert!((x - 0.5 * (t.cos() + t.sin())).abs() < 1e-8);
        let y = pair.trajectory.y[k][0];
        assert!((y.powi(3) + y - x).abs() < 1e-10);
    }
}

#[test]
fn rk4_converges_with_fourth_order() {
    let flow = Flow::new(&dae("scalar_linear"), Mode::Raw).unwrap();
    let span = 2.0 * std::f64::consts::PI;
    let err = |steps: usize| {
        let tr = flow.integrate(1.0, &[0.3], &[0.0], 0.0, span, steps).unwrap();
        let last = tr.len() - 1;
        (tr.x[last][0] - scalar_closed_form(1.0, 0.3, span)).abs()
    };
    let (e1, e2) = (err(64), err(128));
    let rate = (e1 / e2).log2();
    assert!(rate > 3.7, "observed order {rate}");
}

#[test]
fn raw_and_fixed_frame_agree() {
    let p = dae("rotating_surface");
    let raw = Flow::new(&p, Mode::Raw).unwrap();
    let fixed = Flow::new(&p, Mode::FixedFrame).unwrap();
    let span = 2.0 * std::f64::consts::PI;
    // A(0) = I, so the initial data coincide
    let a = raw.integrate(0.7, &[0.2, -0.1], &[0.0], 0.0, span, 512).unwrap();
    let b = fixed.to_original(&fixed.integrate(0.7, &[0.2, -0.1], &[0.0], 0.0, span, 512).unwrap()).unwrap();
    assert!(a.sup_distance(&b) < 1e-8, "{}", a.sup_distance(&b));
}

#[test]
fn rotating_branch_reaches_half() {
    let flow = Flow::new(&dae("rotating_surface"), Mode::FixedFrame).unwrap();
    let seeds = branch_seeds(&flow, &BoxRegion::cube(3, 2.0), 9).unwrap();
    assert_eq!(seeds.len(), 1);
    let branch = continue_branch(&flow, &seeds[0].point, &ContinuationConfig::default()).unwrap();
    assert_eq!(branch.termination, Termination::Completed);
    assert!(branch.pairs[0].trivial);
    let top = branch.pairs.iter().map(|p| p.lambda).fold(0.0, f64::max);
    assert!(top >= 0.5, "lambda reached {top}");
    for p in &branch.pairs {
        let l = p.lambda;
        assert!((p.state0[0] - l * l / (1.0 + l * l)).abs() < 1e-7);
        assert!(p.periodicity_residual <= 1e-8 && p.constraint_residual <= 1e-10);
    }
}

#[test]
fn nonzero_seed_is_rejected() {
    let flow = Flow::new(&dae("rotating_surface"), Mode::FixedFrame).unwrap();
    let r = continue_branch(&flow, &[0.5, 0.0, 0.0], &ContinuationConfig::default());
    assert!(matches!(r, Err(Error::SeedRejected(_))));
}

#[test]
fn second_order_tpair_matches_closed_form() {
    // x1'' = lambda (cos t - x1) has the periodic solution lambda cos t / (lambda - 1)
    let flow = Flow::new(&dae("rotating_surface_2nd"), Mode::FixedFrame).unwrap();
    let lambda = 0.5;
    let pair = find_tpair(&flow, lambda, &[-0.9, 0.0, 0.0, -0.9], &[0.0], &ShootingConfig::default()).unwrap();
    assert!(pair.periodicity_residual <= 1e-8 && pair.constraint_residual <= 1e-10);
    let tr = &pair.trajectory;
    let dx = tr.dx.as_ref().unwrap();
    for (k, &t) in tr.t.iter().enumerate() {
        let exact = lambda * t.cos() / (lambda - 1.0);
        assert!((tr.x[k][0] - exact).abs() <= 1e-6, "x1 at t={t}");
        assert!(tr.x[k][1].abs() <= 1e-6);
        assert!((dx[k][0] + lambda * t.sin() / (lambda - 1.0)).abs() <= 1e-6, "x1' at t={t}");
    }
    let last = tr.len() - 1;
    assert!((dx[last][0] - dx[0][0]).abs() <= 1e-8 && (dx[last][1] - dx[0][1]).abs() <= 1e-8);
}

#[test]
fn first_continuation_step_stays_within_ds() {
    let flow = Flow::new(&dae("scalar_linear"), Mode::FixedFrame).unwrap();
    let seeds = branch_seeds(&flow, &BoxRegion::cube(2, 2.0), 9).unwrap();
    assert_eq!(seeds.len(), 1);
    let cfg = ContinuationConfig { max_steps: 10, ..ContinuationConfig::default() };
    let branch = continue_branch(&flow, &seeds[0].point, &cfg).unwrap();
    assert!(branch.pairs[1].lambda > 0.0 && branch.pairs[1].lambda <= cfg.ds);
    for p in &branch.pairs {
        let l = p.lambda;
        // x(0) of the periodic solution lambda (lambda cos t + sin t) / (1 + lambda^2)
        assert!((p.state0[0] - l * l / (1.0 + l * l)).abs() <= 1e-6);
    }
}

fn without_forcing(name: &str) -> DaeProblem {
    let text = fixtures::text(name).unwrap();
    let start = text.find("[f]").unwrap();
    let end = start + text[start..].find("\n\n").unwrap();
    let m = text[start..end].lines().count() - 1;
    let zeros = vec!["0"; m].join("\n");
    let text = format!("{}[f]\n{zeros}{}", &text[..start], &text[end..]);
    match parse_problem(&text).unwrap().build().unwrap() {
        Problem::Dae(p) => p,
        _ => unreachable!(),
    }
}

#[test]
fn zero_forcing_gives_the_lambda_ray() {
    for name in ["scalar_linear", "rotating_surface"] {
        let p = without_forcing(name);
        let flow = Flow::new(&p, Mode::FixedFrame).unwrap();
        let (m, s) = p.dims();
        let seed = vec![0.0; m + s];
        let cfg = ContinuationConfig { max_steps: 8, ..ContinuationConfig::default() };
        let branch = continue_branch(&flow, &seed, &cfg).unwrap();
        assert_eq!(branch.termination, Termination::Completed, "{name}");
        assert_eq!(branch.pairs.len(), 9);
        for (k, pair) in branch.pairs.iter().enumerate() {
            assert!((pair.lambda - k as f64 * cfg.ds).abs() <= 1e-8, "{name}: lambda {}", pair.lambda);
            assert!(pair.sup_norm_x() <= 1e-10 && pair.sup_norm_y() <= 1e-10);
        }
    }
}
