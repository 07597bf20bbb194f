use proptest::prelude::*;

use pif_autodiff::{bspline_basis, bspline_basis_derivative, chebyshev_basis, uniform_knots};

const INTERVALS: usize = 6;
const DEGREE: usize = 3;
const COUNT: usize = INTERVALS + DEGREE;

fn basis(x: f64) -> Vec<f64> {
    let knots = uniform_knots(-1.0, 1.0, INTERVALS, DEGREE);
    let mut out = vec![0.0; COUNT];
    bspline_basis(&knots, DEGREE, x, &mut out);
    out
}

proptest! {
    #[test]
    fn splines_sum_to_one_and_stay_nonnegative(x in -1.0f64..1.0) {
        let b = basis(x);
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(b.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn splines_have_local_support(x in -1.0f64..0.999) {
        let cell = ((x + 1.0) / 2.0 * INTERVALS as f64).floor() as usize;
        let b = basis(x);
        for (i, v) in b.iter().enumerate() {
            if i < cell || i > cell + DEGREE {
                prop_assert_eq!(*v, 0.0, "basis {} is nonzero in cell {}", i, cell);
            }
        }
    }

    #[test]
    fn spline_derivative_matches_differences(x in -0.95f64..0.95) {
        let knots = uniform_knots(-1.0, 1.0, INTERVALS, DEGREE);
        let mut d = vec![0.0; COUNT];
        bspline_basis_derivative(&knots, DEGREE, x, &mut d);
        let h = 1e-6;
        let (up, down) = (basis(x + h), basis(x - h));
        for i in 0..COUNT {
            let fd = (up[i] - down[i]) / (2.0 * h);
            prop_assert!((fd - d[i]).abs() < 1e-5, "basis {}: {} vs {}", i, d[i], fd);
        }
    }

    #[test]
    fn first_chebyshev_term_is_its_argument(x in -5.0f64..5.0) {
        let u = x.tanh();
        let mut t = vec![0.0; 5];
        let mut dt = vec![0.0; 5];
        chebyshev_basis(u, 4, &mut t, Some(&mut dt));
        prop_assert_eq!(t[1], u);
        prop_assert!(t.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        let h = 1e-6;
        let (mut up, mut down) = (vec![0.0; 5], vec![0.0; 5]);
        chebyshev_basis(u + h, 4, &mut up, None);
        chebyshev_basis(u - h, 4, &mut down, None);
        for d in 0..5 {
            prop_assert!(((up[d] - down[d]) / (2.0 * h) - dt[d]).abs() < 1e-6);
        }
    }
}
