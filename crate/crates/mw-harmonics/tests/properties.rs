use mw_harmonics::convex::{Body, Support};
use mw_harmonics::czo::cz_decompose;
use mw_harmonics::geometry::Cube;
use mw_harmonics::grid::{CellGrid, ScalarField};
use mw_harmonics::linalg::op_norm;
use mw_harmonics::muckenhoupt::{fujii_wilson, roudenko_characteristic, ExponentConfig};
use mw_harmonics::tensor::tensor_matrix;
use mw_harmonics::weights::MatrixWeightField;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dyadic_cube() -> impl Strategy<Value = Cube> {
    (1usize..=3, -4i32..=4).prop_flat_map(|(d, e)| {
        proptest::collection::vec(-20i128..20, d).prop_map(move |m| Cube::dyadic(&m, e))
    })
}

fn points(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, n), 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn triple_and_children(q in dyadic_cube()) {
        let d = q.dim() as i32;
        let t = q.triple();
        prop_assert!(t.contains(&q));
        prop_assert_eq!(t.volume(), q.volume() * mw_harmonics::geometry::Coord::from_integer(3i128.pow(d as u32)));
        let kids = q.children();
        prop_assert_eq!(kids.len(), 1usize << d);
        let total = kids.iter().fold(mw_harmonics::geometry::Coord::from_integer(0), |acc, c| acc + c.volume());
        prop_assert_eq!(total, q.volume());
        for (i, a) in kids.iter().enumerate() {
            prop_assert!(q.strictly_contains(a));
            for b in &kids[i + 1..] {
                prop_assert!(!a.intersects(b));
            }
        }
    }

    #[test]
    fn operator_norm_is_multiplicative(a in proptest::collection::vec(-2.0f64..2.0, 4), b in proptest::collection::vec(-2.0f64..2.0, 9)) {
        let a = DMatrix::from_vec(2, 2, a);
        let b = DMatrix::from_vec(3, 3, b);
        let k = tensor_matrix(&[&a, &b]).unwrap();
        let want = op_norm(&a) * op_norm(&b);
        prop_assert!((op_norm(&k) - want).abs() <= 1e-10 * (1.0 + want));
    }

    #[test]
    fn support_is_sublinear_and_additive(pa in points(3), pb in points(3), u in proptest::collection::vec(-1.0f64..1.0, 3), v in proptest::collection::vec(-1.0f64..1.0, 3), c in 0.0f64..5.0) {
        let a = Body::hull(pa).unwrap();
        let b = Body::hull(pb).unwrap();
        let uv: Vec<f64> = u.iter().zip(&v).map(|(x, y)| x + y).collect();
        let cu: Vec<f64> = u.iter().map(|x| c * x).collect();
        let tol = 1e-10;
        prop_assert!(a.support(&uv) <= a.support(&u) + a.support(&v) + tol);
        prop_assert!((a.support(&cu) - c * a.support(&u)).abs() <= tol * (1.0 + c));
        let s = Body::sum(vec![a.clone(), b.clone()]).unwrap();
        prop_assert!((s.support(&u) - a.support(&u) - b.support(&u)).abs() <= tol);
    }

    #[test]
    fn scalar_characteristic_is_at_least_one(w in proptest::collection::vec(0.05f64..20.0, 8), p in 1.1f64..5.0) {
        let grid = CellGrid::unit(1, 3);
        let field = MatrixWeightField::from_scalar(grid, &w).unwrap();
        let cfg = ExponentConfig::classical(&[p]).unwrap();
        let v = roudenko_characteristic(&[&field], &cfg, &grid.dyadic_family()).unwrap();
        prop_assert!(v.value >= 1.0 - 1e-12);
        let s = ScalarField::new(grid, w).unwrap();
        prop_assert!(fujii_wilson(&s, &grid.domain()).unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn cz_pieces_reassemble(values in proptest::collection::vec(-10.0f64..10.0, 16), scale in 1.0f64..4.0) {
        let grid = CellGrid::unit(2, 2);
        let f = ScalarField::new(grid, values).unwrap();
        let lambda = (f.l1() * scale).max(1e-9);
        let cz = cz_decompose(&f, lambda).unwrap();
        let chk = cz.check(&f);
        prop_assert!(chk.holds(1e-12), "{:?}", chk);
        for q in &cz.cubes {
            prop_assert!(f.abs_average(&grid.cells_of(q).unwrap()) > lambda);
        }
    }
}
