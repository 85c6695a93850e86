use proptest::prelude::*;

use matweight::quadrature::integrate;
use matweight::spd::{matrix_power, Mat};
use matweight::weight_char::{derived_scalars, scalar_ap, CubeFamily};
use matweight::weighted_ops::{averaging_apply, lp_scalar_norm_pow, lp_w_norm_pow, random_disjoint_family};
use matweight::{Grid, Region, ScalarField, SpdField, VectorField};

fn spd(d: usize, entries: &[f64], shift: f64) -> Mat {
    let mut b = Mat::zeros(d);
    for i in 0..d {
        for j in 0..d {
            b.set(i, j, entries[i * d + j]);
        }
    }
    let mut m = b.mul(&b.transpose());
    for i in 0..d {
        m.set(i, i, m.get(i, i) + shift);
    }
    m
}

fn field(g: &Grid, v: &[f64]) -> ScalarField {
    ScalarField::new(g.clone(), v.to_vec()).unwrap()
}

fn grid8() -> Grid {
    Grid::unit_square(8).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_powers_compose(d in 2usize..=3, e in prop::collection::vec(-2.0f64..2.0, 9), shift in 0.05f64..2.0, s in -1.5f64..1.5, t in -1.5f64..1.5) {
        let m = spd(d, &e, shift);
        let lhs = matrix_power(&m, s).unwrap().mul(&matrix_power(&m, t).unwrap());
        let rhs = matrix_power(&m, s + t).unwrap();
        let scale = rhs.max_abs().max(1.0);
        prop_assert!(lhs.frobenius_dist(&rhs) <= 1e-9 * scale, "{} vs scale {}", lhs.frobenius_dist(&rhs), scale);
        let inv = matrix_power(&m, -1.0).unwrap().mul(&m);
        prop_assert!(inv.frobenius_dist(&Mat::identity(d)) <= 1e-9 * m.max_abs().max(1.0) / shift);
    }

    #[test]
    fn integral_is_additive_and_monotone(a in prop::collection::vec(-5.0f64..5.0, 64), b in prop::collection::vec(0.0f64..5.0, 64)) {
        let g = grid8();
        let fa = field(&g, &a);
        let fb = field(&g, &b);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let ia = integrate(&fa, &Region::Domain).unwrap();
        let ib = integrate(&fb, &Region::Domain).unwrap();
        let is = integrate(&field(&g, &sum), &Region::Domain).unwrap();
        prop_assert!((is - ia - ib).abs() <= 1e-12);
        // b >= 0, so a + b dominates a
        prop_assert!(is >= ia - 1e-12);
    }

    #[test]
    fn averaging_contracts_unweighted_norms(v in prop::collection::vec(-3.0f64..3.0, 128), p in 1.0f64..4.0, seed in 0u64..1000) {
        let g = grid8();
        let f = VectorField::new(g.clone(), 2, v).unwrap();
        let id = SpdField::identity(&g, 2);
        let avg = averaging_apply(&f, &random_disjoint_family(&g, seed)).unwrap();
        let before = lp_w_norm_pow(&f, &id, p).unwrap();
        let after = lp_w_norm_pow(&avg, &id, p).unwrap();
        prop_assert!(after <= before * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn matrix_norm_sits_between_eigenvalue_norms(e in prop::collection::vec(-2.0f64..2.0, 4), shift in 0.05f64..1.0, v in prop::collection::vec(-3.0f64..3.0, 128), p in 1.0f64..4.0) {
        let g = grid8();
        let m = spd(2, &e, shift);
        let w = SpdField::from_fn(&g, move |x| {
            let mut a = m.clone();
            a.set(0, 0, a.get(0, 0) * (1.0 + x[0]));
            a.set(1, 1, a.get(1, 1) * (1.0 + x[0]));
            a
        }).unwrap();
        let f = VectorField::new(g.clone(), 2, v).unwrap();
        let (upper, lower) = derived_scalars(&w);
        let mid = lp_w_norm_pow(&f, &w, p).unwrap();
        let lo = lp_scalar_norm_pow(&f, &lower, p).unwrap();
        let hi = lp_scalar_norm_pow(&f, &upper, p).unwrap();
        let tol = 1e-10 * hi.max(1.0);
        prop_assert!(lo <= mid + tol && mid <= hi + tol, "{lo} {mid} {hi}");
    }

    #[test]
    fn scalar_ap_is_scale_invariant_and_at_least_one(v in prop::collection::vec(0.1f64..10.0, 64), c in 0.01f64..100.0, p in 1.1f64..4.0) {
        let g = grid8();
        let w = field(&g, &v);
        let fam = CubeFamily::for_grid(&g);
        let a = scalar_ap(&w, p, &fam).unwrap();
        let b = scalar_ap(&w.scale(c), p, &fam).unwrap();
        prop_assert!(a.value >= 1.0 - 1e-12);
        prop_assert!((a.value - b.value).abs() <= 1e-9 * a.value);
    }
}
