use approx::assert_abs_diff_eq;
use mw_harmonics::grid::CellGrid;
use mw_harmonics::tensor::{partial_contraction, tensor_matrix, tensor_vector, Block, TensorSpace};
use mw_harmonics::weights::{
    make_weight, quasi_triangle_constant, reducing_operator, tensor_weight, MatrixWeightField, WeightSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(v))
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
}

fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

#[test]
fn kronecker_examples() {
    let k = tensor_matrix(&[&diag(&[2.0, 1.0]), &diag(&[3.0, 1.0])]).unwrap();
    assert_eq!(k, diag(&[6.0, 2.0, 3.0, 1.0]));
    assert_abs_diff_eq!(largest_singular_value(&k), 6.0, epsilon = 1e-12);
    let i = tensor_matrix(&[&DMatrix::identity(2, 2), &DMatrix::identity(3, 3)]).unwrap();
    assert_eq!(i, DMatrix::identity(6, 6));
}

#[test]
fn kronecker_norm_is_multiplicative() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (n1, n2) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let (a, b) = (random_matrix(&mut rng, n1), random_matrix(&mut rng, n2));
        let k = tensor_matrix(&[&a, &b]).unwrap();
        let lhs = largest_singular_value(&k);
        let rhs = largest_singular_value(&a) * largest_singular_value(&b);
        assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));
    }
}

#[test]
fn contraction_examples() {
    let space = TensorSpace::new(vec![2, 2]).unwrap();
    let u = tensor_vector(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let r = partial_contraction(&space, &u, Block::Suffix(1), &[&[0.0, 1.0]]).unwrap();
    assert_eq!(r, vec![1.0, 0.0]);
    let r = partial_contraction(&space, &u, Block::Suffix(1), &[&[1.0, 0.0]]).unwrap();
    assert_eq!(r, vec![0.0, 0.0]);
}

#[test]
fn iterated_contraction_is_the_inner_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let space = TensorSpace::new(vec![2, 2, 2]).unwrap();
    for _ in 0..50 {
        let u: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vs: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let full = tensor_vector(&[&vs[0], &vs[1], &vs[2]]);
        let direct: f64 = u.iter().zip(&full).map(|(a, b)| a * b).sum();
        let step = partial_contraction(&space, &u, Block::Prefix(2), &[&vs[0], &vs[1]]).unwrap();
        let iterated: f64 = step.iter().zip(&vs[2]).map(|(a, b)| a * b).sum();
        assert!((direct - iterated).abs() < 1e-12);
        let step = partial_contraction(&space, &u, Block::Suffix(1), &[&vs[1], &vs[2]]).unwrap();
        let iterated: f64 = step.iter().zip(&vs[0]).map(|(a, b)| a * b).sum();
        assert!((direct - iterated).abs() < 1e-12);
    }
}

#[test]
fn weight_generators() {
    let grid = CellGrid::unit(1, 6);
    let id = make_weight(&WeightSpec::Identity { n: 2 }, grid).unwrap();
    assert!(id.matrices().iter().all(|m| *m == DMatrix::identity(2, 2)));
    let flat = make_weight(&WeightSpec::ScalarPower { n: 1, alpha: 0.0, x0: vec![0.0] }, grid).unwrap();
    assert!(flat.matrices().iter().all(|m| m[(0, 0)] == 1.0));
    let root = make_weight(&WeightSpec::ScalarPower { n: 1, alpha: 0.5, x0: vec![0.0] }, grid).unwrap();
    for c in 0..grid.n_cells() {
        let x = (c as f64 + 0.5) / 64.0;
        assert_abs_diff_eq!(root.at(c)[(0, 0)], x.sqrt(), epsilon = 1e-14);
    }
}

#[test]
fn tensor_weight_examples() {
    let grid = CellGrid::unit(1, 2);
    let id = make_weight(&WeightSpec::Identity { n: 2 }, grid).unwrap();
    let t = tensor_weight(&[&id, &id]).unwrap();
    assert!(t.matrices().iter().all(|m| *m == DMatrix::identity(4, 4)));
    let a = MatrixWeightField::constant(grid, diag(&[2.0, 1.0])).unwrap();
    let b = MatrixWeightField::constant(grid, diag(&[3.0, 1.0])).unwrap();
    let t = tensor_weight(&[&a, &b]).unwrap();
    assert!(t.matrices().iter().all(|m| *m == diag(&[6.0, 2.0, 3.0, 1.0])));
    let a = make_weight(&WeightSpec::RandomCells { n: 2, seed: 1, spread: 50.0 }, grid).unwrap();
    let b = make_weight(&WeightSpec::RandomCells { n: 3, seed: 2, spread: 50.0 }, grid).unwrap();
    let t = tensor_weight(&[&a, &b]).unwrap();
    for c in 0..grid.n_cells() {
        let want = largest_singular_value(a.at(c)) * largest_singular_value(b.at(c));
        assert!((largest_singular_value(t.at(c)) - want).abs() < 1e-10 * want);
    }
}

/// `(avg_cells |W u|^p)^{1/p}` summed directly.
fn direct_q(w: &MatrixWeightField, cells: &[usize], p: f64, u: &DVector<f64>) -> f64 {
    let s: f64 = cells.iter().map(|&c| (w.at(c) * u).norm().powf(p)).sum();
    (s / cells.len() as f64).powf(1.0 / p)
}

#[test]
fn identity_and_scalar_reduce_exactly() {
    let grid = CellGrid::unit(1, 3);
    let id = make_weight(&WeightSpec::Identity { n: 3 }, grid).unwrap();
    for p in [0.5, 1.0, 2.0, f64::INFINITY] {
        let r = reducing_operator(&id, &grid.domain(), p).unwrap();
        assert!((&r.a - DMatrix::<f64>::identity(3, 3)).amax() < 2e-4, "p = {p}");
    }
    let c = MatrixWeightField::constant(grid, DMatrix::identity(2, 2) * 7.0).unwrap();
    let r = reducing_operator(&c, &grid.domain(), 3.0).unwrap();
    assert!((&r.a - DMatrix::<f64>::identity(2, 2) * 7.0).amax() < 7.0 * 2e-4);
}

#[test]
fn diagonal_sandwich_against_direct_quasinorm() {
    let grid = CellGrid::unit(1, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mats = (0..grid.n_cells()).map(|_| diag(&[rng.random_range(0.1..10.0), rng.random_range(0.1..10.0)])).collect();
    let w = MatrixWeightField::new(grid, mats).unwrap();
    let q = grid.domain();
    let cells = grid.cells_of(&q).unwrap();
    let r = reducing_operator(&w, &q, 2.0).unwrap();
    let lower = quasi_triangle_constant(2.0).powi(-2) * (1.0 - 1e-3);
    let upper = 2f64.sqrt() * (1.0 + 1e-3);
    for _ in 0..500 {
        let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let ratio = (&r.a * &u).norm() / direct_q(&w, &cells, 2.0, &u);
        assert!(ratio >= lower && ratio <= upper, "{ratio}");
    }
}
