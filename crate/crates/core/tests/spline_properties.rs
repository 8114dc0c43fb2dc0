use kandos_core::spline::{spline_eval, SplineCoefficients, SplineGrid};
use proptest::prelude::*;

fn default_grid() -> SplineGrid {
    SplineGrid::new(-3.0, 3.0, 5, 3).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn partition_of_unity(x in -3.0f64..=3.0) {
        let sum: f64 = default_grid().basis_eval(x).iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn non_negative_and_locally_supported(x in -3.0f64..=3.0) {
        let g = default_grid();
        let b = g.basis_eval(x);
        prop_assert!(b.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let nonzero: Vec<usize> = (0..b.len()).filter(|&i| b[i] != 0.0).collect();
        prop_assert!(nonzero.len() <= g.degree() + 1);
        if let (Some(first), Some(last)) = (nonzero.first(), nonzero.last()) {
            prop_assert!(last - first <= g.degree());
        }
    }

    #[test]
    fn derivative_matches_central_difference(x in -2.999f64..2.999) {
        let g = default_grid();
        let h = 1e-6;
        let d = g.basis_eval_deriv(x);
        let plus = g.basis_eval(x + h);
        let minus = g.basis_eval(x - h);
        for i in 0..d.len() {
            prop_assert!((d[i] - (plus[i] - minus[i]) / (2.0 * h)).abs() <= 1e-5);
        }
        prop_assert!(d.iter().sum::<f64>().abs() <= 1e-9);
    }

    #[test]
    fn clamped_beyond_range(coeffs in proptest::collection::vec(-5.0f64..5.0, 8), excess in 0.0f64..1e3) {
        let g = default_grid();
        let c = SplineCoefficients::for_grid(&g, coeffs).unwrap();
        prop_assert_eq!(spline_eval(&g, &c, 3.0 + excess).unwrap(), spline_eval(&g, &c, 3.0).unwrap());
        prop_assert_eq!(spline_eval(&g, &c, -3.0 - excess).unwrap(), spline_eval(&g, &c, -3.0).unwrap());
    }

    #[test]
    fn partition_of_unity_on_arbitrary_grids(
        lo in -10.0f64..0.0, width in 0.1f64..20.0, intervals in 1usize..12, degree in 0usize..6, t in 0.0f64..=1.0,
    ) {
        let g = SplineGrid::new(lo, lo + width, intervals, degree).unwrap();
        prop_assert_eq!(g.knots().len(), intervals + 2 * degree + 1);
        prop_assert!(g.knots().windows(2).all(|w| w[0] <= w[1]));
        let sum: f64 = g.basis_eval(lo + t * width).iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
    }
}
