use mfdae::densela::Mat;
use mfdae::matpath::{frame_audit, lemma_audit, random_orthogonal, random_skew, MatrixPath, DEFAULT_GRID, TOL_ANALYTIC};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn exp_frame(seed: u64, n: usize) -> MatrixPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = random_skew(&mut rng, n, 1.5);
    let a0 = random_orthogonal(&mut rng, n);
    MatrixPath::exp_frame(s, a0, 2.0 * PI)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn right_product_is_skew(seed in any::<u64>(), n in 2usize..=6, t in 0.0f64..6.3) {
        let p = exp_frame(seed, n);
        let a = p.eval(t, 0).unwrap();
        let m = a.matmul(&p.eval(t, 1).unwrap().transpose());
        prop_assert!((&m + &m.transpose()).norm_inf() <= 1e-10);
        let fd = p.clone().with_fd(Some(1e-4));
        let m = a.matmul(&fd.eval(t, 1).unwrap().transpose());
        prop_assert!((&m + &m.transpose()).norm_inf() <= 1e-6);
    }

    #[test]
    fn identities_hold_on_exponential_frames(seed in any::<u64>(), n in 2usize..=6) {
        let p = exp_frame(seed, n);
        let r = lemma_audit(&p, DEFAULT_GRID, TOL_ANALYTIC, true).unwrap();
        prop_assert!(r.max_identity_residual() <= 1e-8);
        prop_assert!(r.prop2_equivalence.0 <= 1e-8 && r.prop2_equivalence.1 <= 1e-8);
        let fd = p.with_fd(Some(1e-4));
        let r = lemma_audit(&fd, DEFAULT_GRID, 1e-4, true).unwrap();
        prop_assert!(r.max_identity_residual() <= 1e-4);
    }

    #[test]
    fn fd_derivatives_are_second_order(seed in any::<u64>(), n in 2usize..=4, t in 0.0f64..6.3) {
        let p = exp_frame(seed, n);
        let err = |h: f64| {
            let fd = p.clone().with_fd(Some(h));
            (&fd.eval(t, 1).unwrap() - &p.eval(t, 1).unwrap()).max_abs()
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        prop_assert!(e1 <= 1e-2 && e2 <= e1 / 3.0, "{e1} {e2}");
    }
}

#[test]
fn one_sided_constancy_is_equivalent() {
    // both constant and unequal
    let c4 = frame_audit(&MatrixPath::counterexample4(), DEFAULT_GRID, 1e-10).unwrap();
    assert!(c4.right_constant && c4.left_constant && c4.product_gap >= 0.5);
    // both non-constant
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s1 = random_skew(&mut rng, 3, 1.0);
    let s2 = random_skew(&mut rng, 3, 1.0);
    let p = MatrixPath::two_exp_frame(s1, s2, 1.0);
    let a = frame_audit(&p, DEFAULT_GRID, TOL_ANALYTIC).unwrap();
    assert!(a.orthogonal && !a.right_constant && !a.left_constant);
}

#[test]
fn audited_m_has_nonnegative_determinant() {
    for seed in 0..20 {
        let p = exp_frame(seed, 2 + (seed as usize) % 5);
        let a = frame_audit(&p, DEFAULT_GRID, TOL_ANALYTIC).unwrap();
        assert!(a.m.det() >= -1e-12, "{}", a.m.det());
    }
}

#[test]
fn named_paths() {
    let rot = MatrixPath::named("rot2").unwrap();
    let a = frame_audit(&rot, DEFAULT_GRID, TOL_ANALYTIC).unwrap();
    assert!((&a.m - &Mat::from_rows(&[[0.0, 1.0], [-1.0, 0.0]])).max_abs() <= 1e-12);
    assert!(MatrixPath::named("nope").is_err());
}
