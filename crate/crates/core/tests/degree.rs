use std::sync::Arc;

use mfdae::degree::{degree_both, degree_generic, degree_reduced, find_zeros, BoxRegion, CandidateMap};
use mfdae::densela::Mat;
use mfdae::transform::{Constraint, FnConstraint};
use mfdae::Error;
use proptest::prelude::*;

/// `g_i(p, q) = q_i^3 - a_i q_i + b_i + (C p)_i + eps q_{i+1}`.
fn cubic_constraint(a: Vec<f64>, b: Vec<f64>, c: Vec<Vec<f64>>, eps: f64) -> Arc<dyn Constraint> {
    let s = a.len();
    let m = c[0].len();
    Arc::new(FnConstraint::new(
        m,
        s,
        Arc::new(move |p: &[f64], q: &[f64]| {
            Ok((0..s)
                .map(|i| {
                    let cp: f64 = c[i].iter().zip(p).map(|(x, y)| x * y).sum();
                    let coupling = if s > 1 { eps * q[(i + 1) % s] } else { 0.0 };
                    q[i].powi(3) - a[i] * q[i] + b[i] + cp + coupling
                })
                .collect())
        }),
    ))
}

fn arb_map() -> impl Strategy<Value = CandidateMap> {
    (1usize..=2, 1usize..=2).prop_flat_map(|(m, s)| {
        (
            prop::collection::vec(-2.0f64..2.0, m * m),
            prop::collection::vec(-1.5f64..1.5, s),
            prop::collection::vec(-0.4f64..0.4, s),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, m), s),
            -0.2f64..0.2,
        )
            .prop_filter_map("nearly singular D", move |(d, a, b, c, eps)| {
                let d = Mat::from_vec(m, m, d).unwrap();
                (d.det().abs() >= 0.2).then(|| CandidateMap::new(d, cubic_constraint(a, b, c, eps)).unwrap())
            })
    })
}

/// Draws with zeros on or near the boundary, or degenerate zeros, have no well-defined degree.
fn ill_posed(e: &Error) -> bool {
    matches!(e, Error::BoundaryZero(_) | Error::DegenerateZero { .. } | Error::SuspectIncomplete(_))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reduced_and_generic_agree(map in arb_map()) {
        let bx = BoxRegion::cube(map.m() + map.s(), 2.0);
        match degree_both(&map, &bx, 9) {
            Ok((r, g)) => prop_assert_eq!(r.degree, g.degree),
            Err(e) => {
                prop_assert!(ill_posed(&e), "unexpected error {}", e);
                prop_assume!(false);
            }
        }
    }

    #[test]
    fn zero_count_and_sign(a in 0.2f64..3.0, d in prop::sample::select(vec![-1.5, 0.7, 2.0])) {
        let g = cubic_constraint(vec![a], vec![0.0], vec![vec![1.0]], 0.0);
        let map = CandidateMap::new(Mat::from_rows(&[[d]]), g).unwrap();
        let cert = degree_reduced(&map, &BoxRegion::cube(2, 2.0), 9).unwrap();
        prop_assert_eq!(cert.zeros.len(), 3);
        prop_assert_eq!(cert.degree, d.signum() as i64);
        prop_assert_eq!(cert.linear_sign, Some(d.signum() as i32));
    }

    #[test]
    fn positive_scaling_keeps_degree_and_negation_flips_it(map in arb_map(), c in 0.1f64..10.0) {
        let n = map.m() + map.s();
        let bx = BoxRegion::cube(n, 2.0);
        let f = |z: &[f64]| map.eval(z);
        let base = degree_generic(&f, None, &bx, 9);
        prop_assume!(base.is_ok());
        let base = base.unwrap().degree;
        let scaled = |z: &[f64]| map.eval(z).map(|v| v.into_iter().map(|x| c * x).collect());
        prop_assert_eq!(degree_generic(&scaled, None, &bx, 9).unwrap().degree, base);
        let flipped = |z: &[f64]| {
            map.eval(z).map(|mut v| {
                v[n - 1] = -v[n - 1];
                v
            })
        };
        prop_assert_eq!(degree_generic(&flipped, None, &bx, 9).unwrap().degree, -base);
    }
}

#[test]
fn degenerate_and_boundary_zeros_are_errors() {
    let bx = BoxRegion::cube(1, 1.0);
    let f = |z: &[f64]| Ok(vec![z[0] * z[0]]);
    let j = |z: &[f64]| Ok(Mat::from_rows(&[[2.0 * z[0]]]));
    assert!(matches!(find_zeros(&f, &j, &bx, 9), Err(Error::DegenerateZero { .. })));
    let f = |z: &[f64]| Ok(vec![z[0] - 1.0]);
    assert!(matches!(degree_generic(&f, None, &bx, 9), Err(Error::BoundaryZero(_))));
}

#[test]
fn reduced_method_needs_the_origin() {
    let g = cubic_constraint(vec![1.0], vec![0.0], vec![vec![1.0]], 0.0);
    let map = CandidateMap::new(Mat::from_rows(&[[1.0]]), g).unwrap();
    let bx = BoxRegion::new(vec![0.5, -2.0], vec![1.5, 2.0]).unwrap();
    assert!(degree_reduced(&map, &bx, 9).is_err());
}
