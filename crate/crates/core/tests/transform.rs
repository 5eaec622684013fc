use std::sync::Arc;

use mfdae::densela::{norm_inf, Mat};
use mfdae::fixtures;
use mfdae::matpath::{random_orthogonal, random_skew, MatrixPath};
use mfdae::periodic::{Flow, Mode};
use mfdae::probfile::Problem;
use mfdae::slred::reduce;
use mfdae::transform::{c_frame_drifts, pull_back, push_forward, DaeProblem, Trajectory};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dae(name: &str) -> DaeProblem {
    match fixtures::load(name).unwrap() {
        Problem::Dae(p) => p,
        Problem::SemiLinear(s) => DaeProblem::First(reduce(&s).unwrap().problem),
    }
}

/// Raw and fixed-frame runs from the same original initial data, compared in original coordinates.
fn mode_gap(name: &str, lambda: f64, x0: &[f64], steps: usize) -> f64 {
    let p = dae(name);
    let raw = Flow::new(&p, Mode::Raw).unwrap();
    let fixed = Flow::new(&p, Mode::FixedFrame).unwrap();
    let (m, s) = p.dims();
    let a0 = p.a().eval(0.0, 0).unwrap();
    let (mut sr, mut sf) = (x0.to_vec(), a0.mul_vec(x0));
    if p.order() == 2 {
        sr.extend(vec![0.0; m]);
        sf.extend(p.a().eval(0.0, 1).unwrap().mul_vec(x0));
    }
    let y0 = vec![0.0; s];
    let a = raw.integrate(lambda, &sr, &y0, 0.0, p.period(), steps).unwrap();
    let b = fixed.to_original(&fixed.integrate(lambda, &sf, &y0, 0.0, p.period(), steps).unwrap()).unwrap();
    a.sup_distance(&b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn raw_and_fixed_agree_first_order(lambda in 0.0f64..1.0, a in -0.5f64..0.5, b in -0.5f64..0.5) {
        let d = mode_gap("rotating_surface", lambda, &[a, b], 1024);
        prop_assert!(d <= 1e-6, "gap {d:.3e}");
    }

    #[test]
    fn raw_and_fixed_agree_second_order(lambda in 0.0f64..0.8, a in -0.5f64..0.5, b in -0.5f64..0.5) {
        let d = mode_gap("rotating_surface_2nd", lambda, &[a, b], 1024);
        prop_assert!(d <= 1e-6, "gap {d:.3e}");
    }

    #[test]
    fn pull_back_inverts_push_forward(seed in any::<u64>(), m in 1usize..=4, s in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = MatrixPath::exp_frame(random_skew(&mut rng, m, 1.0), random_orthogonal(&mut rng, m), 1.0);
        let b = MatrixPath::exp_frame(random_skew(&mut rng, s, 1.0), random_orthogonal(&mut rng, s), 1.0);
        let ts: Vec<f64> = (0..8).map(|k| k as f64 / 8.0).collect();
        let x: Vec<Vec<f64>> = ts.iter().map(|t| (0..m).map(|i| (t + i as f64).sin()).collect()).collect();
        let y: Vec<Vec<f64>> = ts.iter().map(|t| (0..s).map(|i| (2.0 * t - i as f64).cos()).collect()).collect();
        let tr = Trajectory { t: ts, x, y, dx: None, dy: None };
        let back = pull_back(&push_forward(&tr, &a, &b).unwrap(), &a, &b).unwrap();
        prop_assert!(back.sup_distance(&tr) <= 1e-12);
    }
}

#[test]
fn second_order_drifts() {
    let p = dae("rotating_surface_2nd");
    let sys = p.transform().unwrap();
    let m = &sys.audit.m;
    assert!((&sys.d0 - &m.matmul(m).scale(-1.0)).max_abs() <= 1e-10);
    assert!((sys.d1.as_ref().unwrap() - &m.scale(-2.0)).max_abs() <= 1e-10);
}

#[test]
fn first_order_drift_is_negative_m() {
    let sys = dae("rotating_surface").transform().unwrap();
    assert!((&sys.d0 + &sys.audit.m).max_abs() <= 1e-10);
    assert!(!sys.exact_drift);
}

#[test]
fn constraint_is_shared_with_the_original() {
    let p = dae("rotating_surface");
    let sys = p.transform().unwrap();
    assert!(Arc::ptr_eq(p.g(), sys.g()));
}

#[test]
fn noncommuting_drift_switches_to_exact_mode() {
    let sys = dae("commuting_h").transform().unwrap();
    assert!(sys.exact_drift && sys.commutation_residual > 1e-3);
}

#[test]
fn c_frame_drifts_match_left_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = random_skew(&mut rng, 3, 1.0);
    let c0 = random_orthogonal(&mut rng, 3);
    // C(t) = e^{tS} C0, so C^T C' = C0^T S C0
    let k = c0.transpose().matmul(&s).matmul(&c0);
    let c = MatrixPath::exp_frame(s, c0, 1.0);
    let (h1, h2) = c_frame_drifts(&c).unwrap();
    assert!((&h1 - &k.scale(-2.0)).max_abs() <= 1e-10);
    assert!((&h2 - &k.matmul(&k).scale(-1.0)).max_abs() <= 1e-10);
    let s1 = random_skew(&mut rng, 3, 1.0);
    let s2 = random_skew(&mut rng, 3, 1.0);
    assert!(c_frame_drifts(&MatrixPath::two_exp_frame(s1, s2, 1.0)).is_err());
}

#[test]
fn pull_back_recovers_velocities() {
    let a = MatrixPath::named("rot2").unwrap();
    let b = MatrixPath::constant(Mat::identity(1), a.period());
    let t = 0.7;
    let x = [0.3, -0.1];
    let dx = [0.2, 0.5];
    let at = a.eval(t, 0).unwrap();
    let xi = at.mul_vec(&x);
    let u: Vec<f64> =
        at.mul_vec(&dx).iter().zip(a.eval(t, 1).unwrap().mul_vec(&x)).map(|(p, q)| p + q).collect();
    let tr = Trajectory { t: vec![t], x: vec![xi], y: vec![vec![1.0]], dx: Some(vec![u]), dy: Some(vec![vec![0.0]]) };
    let back = pull_back(&tr, &a, &b).unwrap();
    let d = back.dx.unwrap()[0].iter().zip(dx).map(|(p, q)| p - q).collect::<Vec<_>>();
    assert!(norm_inf(&d) <= 1e-12);
}
