use kmis_core::metric::{
    mahalanobis_distance, metric_distance_decomposition, optimal_metric, regularized_metric,
    transform_matrix,
};
use kmis_core::numerics::{sym_eig, SquareMatrix, SymMatrix, DEFAULT_ZERO_TOL_REL};
use proptest::prelude::*;

/// Random orthonormal basis of dimension `d`, from the eigenvectors of a
/// random symmetric matrix.
fn basis(d: usize) -> impl Strategy<Value = SquareMatrix> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| {
        let m = SymMatrix::from_row_major(d, &v).unwrap();
        sym_eig(&m, DEFAULT_ZERO_TOL_REL).unwrap().eigenvectors
    })
}

fn with_spectrum(
    dims: std::ops::RangeInclusive<usize>,
    value: impl Strategy<Value = f64> + Clone + 'static,
) -> impl Strategy<Value = (SymMatrix, Vec<f64>)> {
    dims.prop_flat_map(move |d| {
        (basis(d), prop::collection::vec(value.clone(), d))
            .prop_map(|(v, lam)| (SymMatrix::from_spectrum(&v, &lam).unwrap(), lam))
    })
}

fn signed_magnitude() -> impl Strategy<Value = f64> + Clone {
    (prop::bool::ANY, 0.1f64..10.0).prop_map(|(neg, m)| if neg { -m } else { m })
}

fn mixed_sign() -> impl Strategy<Value = SymMatrix> {
    (2usize..=6).prop_flat_map(|d| {
        (
            basis(d),
            prop::collection::vec(signed_magnitude(), d),
            0.1f64..10.0,
            0.1f64..10.0,
        )
            .prop_map(|(v, mut lam, p, n)| {
                lam[0] = p;
                lam[1] = -n;
                SymMatrix::from_spectrum(&v, &lam).unwrap()
            })
    })
}

fn det(m: &SymMatrix) -> f64 {
    sym_eig(m, DEFAULT_ZERO_TOL_REL)
        .unwrap()
        .eigenvalues
        .iter()
        .product()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// `tr(A^-1 H)` through an independent eigendecomposition of `A`.
fn trace_inv_times(a: &SymMatrix, h: &SymMatrix) -> f64 {
    let e = sym_eig(a, DEFAULT_ZERO_TOL_REL).unwrap();
    (0..a.dim())
        .map(|k| h.quadratic_form(&e.eigenvectors.column(k)) / e.eigenvalues[k])
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn optimal_metric_has_unit_determinant((h, _) in with_spectrum(2..=8, signed_magnitude())) {
        let a = optimal_metric(&h).unwrap();
        prop_assert!((det(&a) - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn optimal_metric_cancels_mixed_curvature(h in mixed_sign()) {
        let a = optimal_metric(&h).unwrap();
        prop_assert!(trace_inv_times(&a, &h).abs() <= 1e-8 * h.max_abs());
    }

    #[test]
    fn regularized_metric_unit_determinant_with_zeros(
        (h, _) in with_spectrum(1..=8, prop_oneof![Just(0.0), signed_magnitude()])
    ) {
        let m = regularized_metric(&h).unwrap();
        prop_assert!((det(m.a_hat()) - 1.0).abs() <= 1e-6);
        let l = transform_matrix(&m).unwrap();
        prop_assert!(max_abs_diff(l.gram().as_slice(), m.a_hat().as_slice()) <= 1e-8);
        prop_assert!(m.eigenvalues().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn regularized_metric_is_scale_invariant(
        (h, _) in with_spectrum(1..=6, prop_oneof![Just(0.0), signed_magnitude()]),
        c in 1e-3f64..1e3,
    ) {
        let a = regularized_metric(&h).unwrap();
        let b = regularized_metric(&h.scaled(c)).unwrap();
        prop_assert!(max_abs_diff(a.a_hat().as_slice(), b.a_hat().as_slice()) <= 1e-8);
    }

    #[test]
    fn distance_agrees_with_factor_and_decomposition(
        (h, _) in with_spectrum(2..=6, signed_magnitude()),
        a in prop::collection::vec(-2.0f64..2.0, 6),
        b in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let d = h.dim();
        let (a, b) = (&a[..d], &b[..d]);
        let m = regularized_metric(&h).unwrap();
        let l = transform_matrix(&m).unwrap();
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let mut z = vec![0.0; d];
        l.transpose_mul_vec(&diff, &mut z);
        let via_factor = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        let direct = mahalanobis_distance(a, b, m.a_hat()).unwrap();
        prop_assert!((via_factor - direct).abs() <= 1e-9 * (1.0 + direct));

        let opt = optimal_metric(&h).unwrap();
        let total: f64 = metric_distance_decomposition(a, b, &h)
            .unwrap()
            .iter()
            .map(|t| t.contribution)
            .sum();
        let sq = opt.quadratic_form(&diff);
        prop_assert!((total - sq).abs() <= 1e-9 * (1.0 + sq));
    }
}
