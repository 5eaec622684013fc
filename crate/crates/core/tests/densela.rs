use mfdae::densela::{newton_solve, newton_solve_fd, quadrature_periodic, svd_small, Mat, NewtonConfig};
use proptest::prelude::*;

fn arb_matrix() -> impl Strategy<Value = Mat> {
    (1usize..=6, 1usize..=6, 0usize..=2).prop_flat_map(|(r, c, deficiency)| {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |data| {
            let mut m = Mat::from_vec(r, c, data).unwrap();
            // copy columns to lower the rank
            for k in 0..deficiency.min(c.saturating_sub(1)) {
                let src = m.col(0);
                m.set_col(c - 1 - k, &src.iter().map(|v| 0.5 * v).collect::<Vec<_>>());
            }
            m
        })
    })
}

fn square(m: &Mat) -> Mat {
    let n = m.rows().max(m.cols());
    let mut s = Mat::zeros(n, n);
    s.set_block(0, 0, m);
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn svd_is_orthogonal_and_reconstructs(e in arb_matrix()) {
        let e = square(&e);
        let svd = svd_small(&e).unwrap();
        let n = e.rows();
        let id = Mat::identity(n);
        prop_assert!((&svd.p.transpose().matmul(&svd.p) - &id).max_abs() <= 1e-12);
        prop_assert!((&svd.q.transpose().matmul(&svd.q) - &id).max_abs() <= 1e-12);
        let recon = svd.p.matmul(&Mat::diag(&svd.sigma)).matmul(&svd.q.transpose());
        prop_assert!((&recon - &e).norm_inf() <= 1e-10 * e.norm_inf().max(f64::MIN_POSITIVE));
        prop_assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(svd.sigma.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn newton_result_meets_tolerance(a in -2.0f64..2.0, b in -2.0f64..2.0, x0 in -3.0f64..3.0, y0 in -3.0f64..3.0) {
        // x^3 + x - a = 0, y + x y^3 / 10 - b = 0 (monotone in each unknown)
        let res = |v: &[f64]| Ok(vec![v[0].powi(3) + v[0] - a, v[1] + 0.1 * v[0].abs() * v[1].powi(3) - b]);
        let cfg = NewtonConfig::default();
        if let Ok(v) = newton_solve_fd(res, &[x0, y0], &cfg) {
            let r = res(&v).unwrap();
            prop_assert!(r.iter().all(|c| c.abs() <= cfg.tol_residual));
        }
        let jac = |v: &[f64]| Ok(Mat::from_rows(&[[3.0 * v[0] * v[0] + 1.0, 0.0], [0.0, 1.0]]));
        let lin = |v: &[f64]| Ok(vec![v[0].powi(3) + v[0] - a, v[1] - b]);
        let v = newton_solve(lin, jac, &[x0, y0], &cfg).unwrap();
        prop_assert!(lin(&v).unwrap().iter().all(|c| c.abs() <= cfg.tol_residual));
    }

    #[test]
    fn quadrature_is_exact_on_trig_polynomials(coef in prop::collection::vec(-1.0f64..1.0, 15), period in 0.5f64..10.0) {
        let n = 16;
        // degree < n / 2
        let h = |t: f64| {
            let w = 2.0 * std::f64::consts::PI / period;
            let mut v = coef[0];
            for k in 1..=7 {
                v += coef[2 * k - 1] * (k as f64 * w * t).cos() + coef[2 * k] * (k as f64 * w * t).sin();
            }
            Ok(vec![v])
        };
        let mean = quadrature_periodic(h, period, n).unwrap();
        prop_assert!((mean[0] - coef[0]).abs() <= 1e-12);
    }
}

#[test]
fn svd_of_zero_and_identity() {
    let z = svd_small(&Mat::zeros(3, 3)).unwrap();
    assert_eq!(z.sigma, vec![0.0; 3]);
    assert_eq!(z.rank(1e-10), 0);
    let i = svd_small(&Mat::identity(4)).unwrap();
    assert_eq!(i.rank(1e-10), 4);
}
