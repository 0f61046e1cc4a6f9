use approx::assert_relative_eq;
use mw_harmonics::convex::{Body, BodyField};
use mw_harmonics::geometry::Cube;
use mw_harmonics::grid::{CellGrid, ScalarField, VectorField};
use mw_harmonics::maximal::{
    auxiliary_maximal, convex_body_maximal, eta_maximal, maximal_sparse_dominate, multilinear_maximal, weak_norm,
    weak_norm_maximal, weighted_maximal, Input,
};
use mw_harmonics::weights::{make_weight, MatrixWeightField, WeightSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scalar(grid: CellGrid, rng: &mut ChaCha8Rng) -> ScalarField {
    ScalarField::new(grid, (0..grid.n_cells()).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn random_vectors(grid: CellGrid, dim: usize, rng: &mut ChaCha8Rng) -> VectorField {
    VectorField::new(grid, dim, (0..grid.n_cells() * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `max_{Q ∋ x} g(cells of Q, x)` by scanning the whole family for every cell.
fn brute_max(grid: &CellGrid, cubes: &[Cube], g: impl Fn(&[usize], usize) -> f64) -> Vec<f64> {
    let cells: Vec<Vec<usize>> = cubes.iter().map(|q| grid.cells_of(q).unwrap()).collect();
    (0..grid.n_cells())
        .map(|x| cells.iter().filter(|cs| cs.contains(&x)).map(|cs| g(cs, x)).fold(0.0, f64::max))
        .collect()
}

#[test]
fn eta_maximal_of_half_indicator() {
    let grid = CellGrid::unit(1, 4);
    let f = ScalarField::from_fn(grid, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
    let fam = grid.dyadic_family();
    let m1 = eta_maximal(&f, 1.0, &fam).unwrap();
    let m2 = eta_maximal(&f, 2.0, &fam).unwrap();
    for c in 8..16 {
        assert_eq!(m1.values[c], 0.5);
        assert_relative_eq!(m2.values[c], 0.5f64.sqrt(), epsilon = 1e-15);
    }
    assert!(m1.values[..8].iter().all(|&v| v == 1.0));
    assert!(eta_maximal(&f, 0.0, &fam).is_err());
}

#[test]
fn multilinear_maximal_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (d, level) in [(1, 5), (2, 3)] {
        let grid = CellGrid::unit(d, level);
        let fam = grid.sliding_family();
        let f = random_scalar(grid, &mut rng);
        let g = random_scalar(grid, &mut rng);
        let m = multilinear_maximal(&[&f, &g], &fam).unwrap();
        let avg = |h: &ScalarField, cs: &[usize]| cs.iter().map(|&c| h.values[c].abs()).sum::<f64>() / cs.len() as f64;
        let want = brute_max(&grid, &fam, |cs, _| avg(&f, cs) * avg(&g, cs));
        for (a, b) in m.values.iter().zip(&want) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }
}

#[test]
fn weighted_maximal_with_identity_is_multilinear_of_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = CellGrid::unit(1, 4);
    let fam = grid.dyadic_family();
    let f = random_vectors(grid, 2, &mut rng);
    let g = random_vectors(grid, 3, &mut rng);
    let i2 = MatrixWeightField::constant(grid, DMatrix::identity(2, 2)).unwrap();
    let i3 = MatrixWeightField::constant(grid, DMatrix::identity(3, 3)).unwrap();
    let m = weighted_maximal(&[Input::Vectors(&f), Input::Vectors(&g)], &[&i2, &i3], &[1.0, 1.0], &fam).unwrap();
    let want = multilinear_maximal(&[&f.norms(), &g.norms()], &fam).unwrap();
    for (a, b) in m.values.iter().zip(&want.values) {
        assert_relative_eq!(*a, *b, max_relative = 1e-12);
    }
}

#[test]
fn scalar_weighted_maximal_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = CellGrid::unit(1, 4);
    let fam = grid.dyadic_family();
    let w = ScalarField::new(grid, (0..16).map(|_| rng.random_range(0.2..5.0)).collect()).unwrap();
    let wf = MatrixWeightField::from_scalar(grid, &w.values).unwrap();
    let f = random_scalar(grid, &mut rng);
    let r = 1.5;
    let m = weighted_maximal(&[Input::Vectors(&VectorField::from_scalar(&f))], &[&wf], &[r], &fam).unwrap();
    let want = brute_max(&grid, &fam, |cs, x| {
        let mean = cs.iter().map(|&y| (w.values[x] * f.values[y].abs()).powf(r)).sum::<f64>() / cs.len() as f64;
        mean.powf(1.0 / r)
    });
    for (a, b) in m.values.iter().zip(&want) {
        assert_relative_eq!(*a, *b, max_relative = 1e-12);
    }
}

#[test]
fn weighted_maximal_of_constant_bodies() {
    let grid = CellGrid::unit(1, 3);
    let f = BodyField::new(grid, vec![Body::ball(2); 8]).unwrap();
    let w = MatrixWeightField::constant(grid, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 0.5]))).unwrap();
    let m = weighted_maximal(&[Input::Bodies(&f)], &[&w], &[2.0], &grid.dyadic_family()).unwrap();
    assert!(m.values.iter().all(|&v| (v - 3.0).abs() < 1e-9));
}

#[test]
fn auxiliary_maximal_with_identity_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = CellGrid::unit(1, 3);
    let fam = grid.dyadic_family();
    let f = random_vectors(grid, 2, &mut rng);
    let id = make_weight(&WeightSpec::Identity { n: 2 }, grid).unwrap();
    let m = auxiliary_maximal(&[Input::Vectors(&f), Input::Vectors(&f)], &[&id, &id], &[1.0, 1.0], &[2.0, 2.0], &fam).unwrap();
    let n = f.norms();
    let want = multilinear_maximal(&[&n, &n], &fam).unwrap();
    for (a, b) in m.values.iter().zip(&want.values) {
        assert_relative_eq!(*a, *b, max_relative = 1e-3);
    }
}

#[test]
fn scalar_auxiliary_maximal_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = CellGrid::unit(1, 3);
    let fam = grid.dyadic_family();
    let w: Vec<f64> = (0..8).map(|_| rng.random_range(0.5..4.0)).collect();
    let wf = MatrixWeightField::from_scalar(grid, &w).unwrap();
    let f = random_scalar(grid, &mut rng);
    let (r, t) = (1.0, 3.0);
    let m = auxiliary_maximal(&[Input::Vectors(&VectorField::from_scalar(&f))], &[&wf], &[r], &[t], &fam).unwrap();
    // In one dimension A_{w^{-1},Q,t} = ⟨w^{-t}⟩_Q^{1/t}.
    let want = brute_max(&grid, &fam, |cs, _| {
        let k = cs.len() as f64;
        let a = (cs.iter().map(|&c| w[c].powf(-t)).sum::<f64>() / k).powf(1.0 / t);
        (cs.iter().map(|&c| f.values[c].abs().powf(r)).sum::<f64>() / k).powf(1.0 / r) / a
    });
    for (a, b) in m.values.iter().zip(&want) {
        assert_relative_eq!(*a, *b, max_relative = 1e-3);
    }
}

#[test]
fn convex_body_maximal_of_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = CellGrid::unit(1, 3);
    let fam = grid.dyadic_family();
    let f = random_vectors(grid, 2, &mut rng);
    let g = random_vectors(grid, 2, &mut rng);
    let mk = convex_body_maximal(&[Input::Vectors(&f), Input::Vectors(&g)], &fam).unwrap();
    assert_eq!(mk.dim(), 4);
    assert!(mk.exact_support());
    // ⟨𝒦(f)⟩_Q is the zonotope (1/|Q|) Σ_y [-f(y), f(y)]; its vertices are the sign sums.
    let vertices = |h: &VectorField, cs: &[usize]| -> Vec<Vec<f64>> {
        (0..1u32 << cs.len())
            .map(|signs| {
                let mut u = vec![0.0; h.dim];
                for (i, &y) in cs.iter().enumerate() {
                    let s = if signs >> i & 1 == 1 { 1.0 } else { -1.0 };
                    for (k, x) in h.get(y).iter().enumerate() {
                        u[k] += s * x / cs.len() as f64;
                    }
                }
                u
            })
            .collect()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let want_norm = brute_max(&grid, &fam, |cs, _| {
        let nf = vertices(&f, cs).iter().map(|u| norm(u)).fold(0.0, f64::max);
        let ng = vertices(&g, cs).iter().map(|u| norm(u)).fold(0.0, f64::max);
        nf * ng
    });
    for (c, want) in want_norm.iter().enumerate() {
        assert_relative_eq!(mk.norm_at(c), *want, max_relative = 1e-9);
    }
    for _ in 0..10 {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        // sup_{a, b} <a ⊗ b, v> over vertex pairs.
        let v = &v;
        let want = brute_max(&grid, &fam, |cs, _| {
            let vg = vertices(&g, cs);
            vertices(&f, cs)
                .iter()
                .flat_map(|a| vg.iter().map(move |b| (0..4).map(|i| a[i / 2] * b[i % 2] * v[i]).sum::<f64>()))
                .fold(0.0, f64::max)
        });
        for (c, w) in want.iter().enumerate() {
            assert_relative_eq!(mk.support(c, v), *w, max_relative = 1e-9, epsilon = 1e-12);
        }
    }
}

#[test]
fn weak_norm_of_indicator_bodies() {
    let grid = CellGrid::unit(1, 3);
    let bodies = (0..8).map(|c| if c < 3 { Body::ball(2) } else { Body::zero(2) }).collect();
    let f = BodyField::new(grid, bodies).unwrap();
    let w = MatrixWeightField::constant(grid, DMatrix::identity(2, 2) * 2.0).unwrap();
    for p in [1.0, 2.0, 4.0] {
        assert_relative_eq!(weak_norm(&f, &w, p).unwrap().value, 2.0 * (3.0f64 / 8.0).powf(1.0 / p), epsilon = 1e-12);
    }
    let zero = BodyField::new(grid, vec![Body::zero(2); 8]).unwrap();
    assert_eq!(weak_norm(&zero, &w, 1.0).unwrap().value, 0.0);
    assert!(weak_norm(&f, &w, 0.0).is_err());
}

#[test]
fn weak_norm_of_maximal_half_indicator() {
    let grid = CellGrid::unit(1, 3);
    let e = ScalarField::from_fn(grid, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
    let f = VectorField::scaled(&e, &[1.0, 0.0]);
    let mk = convex_body_maximal(&[Input::Vectors(&f)], &grid.dyadic_family()).unwrap();
    let w = MatrixWeightField::constant(grid, DMatrix::identity(2, 2)).unwrap();
    // The maximal body is [-e1, e1] on the left half and [-e1/2, e1/2] on the right,
    // so the weak norm is max(|E|^{1/p}, 1/2).
    for p in [1.0, 2.0, 3.0] {
        let want = 0.5f64.powf(1.0 / p).max(0.5);
        assert_relative_eq!(weak_norm_maximal(&mk, &w, p, 32).unwrap().value, want, epsilon = 1e-9);
    }
}

#[test]
fn sparse_family_for_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = CellGrid::unit(1, 4);
    let fam = grid.dyadic_family();
    let f = random_vectors(grid, 2, &mut rng);
    let g = random_vectors(grid, 1, &mut rng);
    let out = maximal_sparse_dominate(&[Input::Vectors(&f), Input::Vectors(&g)], &fam).unwrap();
    assert!(out.certified(), "{out:?}");
    assert!(out.sparse.contains(&grid.domain()));
    assert!(out.sparse.iter().all(|q| fam.contains(q)));
    assert_relative_eq!(out.bound, 2f64.powf(1.5) * 16.0);
    assert!(maximal_sparse_dominate(&[Input::Vectors(&f)], &[]).is_err());
}
