use approx::assert_relative_eq;
use mw_harmonics::czo::{
    apply_scalar, convex_sparse_operator, cz_decompose, dini, dini_modulus, grand_maximal, nondegeneracy_check,
    nondegeneracy_constant, riesz_kernel, sparse_dominate, zero_kernel, Modulus,
};
use mw_harmonics::convex::Support;
use mw_harmonics::geometry::{Cube, SparseFamily};
use mw_harmonics::grid::{CellGrid, ScalarField, VectorField};
use mw_harmonics::maximal::Input;
use mw_harmonics::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn dini_integrals_in_closed_form() {
    assert_relative_eq!(dini(|t| t, 8).unwrap().value, 1.0, epsilon = 1e-10);
    assert_relative_eq!(dini(|t| t.sqrt(), 8).unwrap().value, 2.0, epsilon = 1e-10);
    assert_relative_eq!(dini(|t| t.powf(0.25), 8).unwrap().value, 4.0, epsilon = 1e-9);
    // ∫_0^1 (1 - ln t)^{-a} dt/t = ∫_0^∞ (1 + s)^{-a} ds = 1/(a - 1).
    for a in [1.5, 2.0, 3.0] {
        let v = dini_modulus(&Modulus::InverseLog { power: a }, 8).unwrap();
        assert!((v.value - 1.0 / (a - 1.0)).abs() < 1e-4, "a={a}: {v:?}");
    }
    // In t itself the integrand vanishes below e^{-745}; only a fast tail survives that.
    let direct = dini(|t| Modulus::InverseLog { power: 3.0 }.eval(t), 8).unwrap();
    assert!((direct.value - 0.5).abs() < 1e-4);
    assert!(matches!(dini(|_| 1.0, 6), Err(Error::Divergent(_))));
    assert!(dini(|t| t, 0).is_err());
}

fn riesz_direct(x: &[f64], ys: &[&[f64]]) -> f64 {
    let md = (ys.len() * x.len()) as i32;
    let num: f64 = ys.iter().map(|y| x[0] - y[0]).sum();
    let den: f64 = ys.iter().map(|y| x.iter().zip(*y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()).sum();
    num / den.powi(md + 1)
}

#[test]
fn riesz_kernel_values() {
    assert_eq!(riesz_kernel(1, 1).unwrap().eval(&[0.0], &[&[1.0]]), -1.0);
    assert_eq!(riesz_kernel(2, 1).unwrap().eval(&[0.0], &[&[1.0], &[1.0]]), -0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (m, d) in [(1, 2), (2, 2), (3, 1)] {
        let k = riesz_kernel(m, d).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ys: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let refs: Vec<&[f64]> = ys.iter().map(|v| v.as_slice()).collect();
            assert_relative_eq!(k.eval(&x, &refs), riesz_direct(&x, &refs), max_relative = 1e-12);
        }
        assert!(k.size_ratio(10_000, 3) <= k.size_constant);
        assert!(k.smoothness_ratio(10_000, 4) <= k.smoothness_constant);
    }
    assert!(riesz_kernel(0, 1).is_err());
}

#[test]
fn zero_kernel_vanishes() {
    let grid = CellGrid::new(1, 2, 5).unwrap();
    let f = ScalarField::indicator(grid, &Cube::dyadic(&[1], 0)).unwrap();
    let t = apply_scalar(&zero_kernel(2, 1), &[&f, &f]).unwrap();
    assert!(t.values.iter().all(|&v| v == 0.0));
}

#[test]
fn riesz_transform_off_support() {
    // T 1_{[1,2)}(x) = -ln((2 - x)/(1 - x)) for x < 1.
    for level in [6u32, 8] {
        let grid = CellGrid::new(1, 2, level).unwrap();
        let f = ScalarField::indicator(grid, &Cube::dyadic(&[1], 0)).unwrap();
        let t = apply_scalar(&riesz_kernel(1, 1).unwrap(), &[&f]).unwrap();
        let h = grid.cell_side_f64();
        for c in 0..grid.n_cells() / 8 {
            let x = grid.center(c)[0];
            assert!((t.values[c] + ((2.0 - x) / (1.0 - x)).ln()).abs() < 2.0 * h, "level {level} cell {c}");
        }
    }
}

#[test]
fn bilinear_transform_is_multilinear() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = CellGrid::new(1, 2, 4).unwrap();
    let rand_field = |rng: &mut ChaCha8Rng| ScalarField::new(grid, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let (f, g, h) = (rand_field(&mut rng), rand_field(&mut rng), rand_field(&mut rng));
    let (a, b) = (0.7, -1.3);
    let mix = ScalarField::new(grid, f.values.iter().zip(&g.values).map(|(x, y)| a * x + b * y).collect()).unwrap();
    let k = riesz_kernel(2, 1).unwrap();
    let lhs = apply_scalar(&k, &[&mix, &h]).unwrap();
    let tf = apply_scalar(&k, &[&f, &h]).unwrap();
    let tg = apply_scalar(&k, &[&g, &h]).unwrap();
    for c in 0..16 {
        assert_relative_eq!(lhs.values[c], a * tf.values[c] + b * tg.values[c], epsilon = 1e-10);
    }
}

#[test]
fn grand_maximal_matches_brute_force() {
    let grid = CellGrid::new(1, 2, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let f = ScalarField::new(grid, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let k = riesz_kernel(1, 1).unwrap();
    let cubes = grid.dyadic_family();
    let g = grand_maximal(&k, &[&f], &cubes, None).unwrap();
    let full = apply_scalar(&k, &[&f]).unwrap();
    let mut want = vec![0.0f64; 16];
    let mut skipped = 0;
    for q in &cubes {
        let Ok(triple) = grid.cells_of(&q.triple()) else {
            skipped += 1;
            continue;
        };
        let mut local = ScalarField::constant(grid, 0.0);
        triple.iter().for_each(|&c| local.values[c] = f.values[c]);
        let tl = apply_scalar(&k, &[&local]).unwrap();
        let cells = grid.cells_of(q).unwrap();
        let v = cells.iter().map(|&c| (full.values[c] - tl.values[c]).abs()).fold(0.0, f64::max);
        cells.iter().for_each(|&c| want[c] = want[c].max(v));
    }
    assert_eq!(g.skipped.len(), skipped);
    for c in 0..16 {
        assert_relative_eq!(g.values.values[c], want[c], epsilon = 1e-12);
    }
    let z = grand_maximal(&zero_kernel(1, 1), &[&f], &cubes, None).unwrap();
    assert!(z.values.values.iter().all(|&v| v == 0.0));
    let q0 = Cube::dyadic(&[1], 0);
    let top = grand_maximal(&k, &[&f], &[q0.clone()], Some(&q0)).unwrap();
    assert!(top.values.values.iter().all(|&v| v == 0.0));
}

/// Maximal dyadic cubes with `⟨|f|⟩ > λ`, listed by scanning every dyadic cube.
fn brute_cz_cubes(f: &ScalarField, lambda: f64) -> Vec<Cube> {
    let grid = f.grid;
    let depth = grid.per_axis().trailing_zeros();
    let all = grid.dyadic_subcubes(&grid.domain(), depth).unwrap();
    let big: Vec<&Cube> = all.iter().filter(|q| f.abs_average(&grid.cells_of(q).unwrap()) > lambda).collect();
    let mut out: Vec<Cube> =
        big.iter().filter(|q| !big.iter().any(|r| r != *q && r.contains(q))).map(|q| (*q).clone()).collect();
    out.sort_by(|a, b| a.corner().cmp(b.corner()));
    out
}

#[test]
fn calderon_zygmund_decomposition() {
    let grid = CellGrid::unit(1, 4);
    let f = ScalarField::from_fn(grid, |x| if x[0] < 0.25 { 4.0 } else { 0.0 });
    let cz = cz_decompose(&f, 2.0).unwrap();
    assert_eq!(cz.cubes, vec![Cube::dyadic(&[0], -2)]);
    let small = ScalarField::from_fn(grid, |x| 2.0 * x[0]);
    assert!(cz_decompose(&small, 2.0).unwrap().cubes.is_empty());
    assert!(cz_decompose(&f, 0.5).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for d in [1, 2] {
        let grid = CellGrid::unit(d, 3);
        let f = ScalarField::new(grid, (0..grid.n_cells()).map(|_| rng.random_range(-1.0..1.0f64).powi(3) * 6.0).collect())
            .unwrap();
        let lambda = f.l1() * 1.5;
        let cz = cz_decompose(&f, lambda).unwrap();
        let mut got = cz.cubes.clone();
        got.sort_by(|a, b| a.corner().cmp(b.corner()));
        assert_eq!(got, brute_cz_cubes(&f, lambda));
        let chk = cz.check(&f);
        assert!(chk.holds(1e-12), "{chk:?}");
        for (a, b) in cz.reconstruct().values.iter().zip(&f.values) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}

#[test]
fn sparse_domination_of_riesz_transform() {
    let grid = CellGrid::new(1, 2, 6).unwrap();
    let q0 = Cube::dyadic(&[1], 0);
    let k = riesz_kernel(1, 1).unwrap();
    let zero = VectorField::zeros(grid, 2);
    let s = sparse_dominate(&k, &[&zero], &q0, 0.5).unwrap();
    assert!(s.dominated);

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut f = VectorField::zeros(grid, 2);
    for c in grid.cells_of(&q0).unwrap() {
        f.get_mut(c).iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    }
    let s = sparse_dominate(&k, &[&f], &q0, 0.5).unwrap();
    assert!(s.certified(), "{s:?}");
    assert_eq!(s.stopping[0], q0);
    assert!(s.stopping.iter().all(|q| q0.contains(q)));
    for node in &s.nodes {
        let filled: f64 = node.children.iter().map(|c| c.volume_f64()).sum();
        assert!(filled <= 0.5 * node.cube.volume_f64() * (1.0 + 1e-12));
        assert!(node.children.iter().all(|c| node.cube.contains(c) && c != &node.cube));
    }
    let triples: Vec<Cube> = s.stopping.iter().map(|q| q.triple()).collect();
    assert_eq!(s.sparse.cubes, triples);
    let outside = VectorField::scaled(&ScalarField::constant(grid, 1.0), &[1.0, 0.0]);
    assert!(sparse_dominate(&k, &[&outside], &q0, 0.5).is_err());
}

#[test]
fn convex_sparse_operator_sums_supports() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let grid = CellGrid::unit(1, 3);
    let f = VectorField::new(grid, 2, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let family = SparseFamily::new(vec![Cube::unit(1), Cube::dyadic(&[0], -1), Cube::dyadic(&[2], -2)]);
    let op = convex_sparse_operator(&[Input::Vectors(&f)], &family).unwrap();
    let bodies = op.to_body_field().unwrap();
    for _ in 0..20 {
        let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        for x in 0..8 {
            // h_{⟨𝒦 f⟩_Q}(v) = ⟨|<f, v>|⟩_Q, summed over the cubes containing x.
            let want: f64 = family
                .cubes
                .iter()
                .map(|q| grid.cells_of(q).unwrap())
                .filter(|cs| cs.contains(&x))
                .map(|cs| cs.iter().map(|&y| (f.get(y)[0] * v[0] + f.get(y)[1] * v[1]).abs()).sum::<f64>() / cs.len() as f64)
                .sum();
            assert_relative_eq!(op.support(x, &v), want, max_relative = 1e-12, epsilon = 1e-14);
            assert_relative_eq!(bodies.bodies[x].support(&v), want, max_relative = 1e-9, epsilon = 1e-12);
        }
    }
}

#[test]
fn nondegeneracy_constants_and_check() {
    // (d - 1 + (2m + 1)^2)^{1/2} / (m (2m - 1))
    assert_relative_eq!(nondegeneracy_constant(1, 1), 3.0, epsilon = 1e-15);
    assert_relative_eq!(nondegeneracy_constant(1, 2), 10f64.sqrt(), epsilon = 1e-15);
    assert_relative_eq!(nondegeneracy_constant(2, 1), 5.0 / 6.0, epsilon = 1e-15);
    assert_relative_eq!(nondegeneracy_constant(2, 3), 27f64.sqrt() / 6.0, epsilon = 1e-15);
    let grid = CellGrid::new(1, 2, 8).unwrap();
    let q = Cube::dyadic(&[1], 0);
    let r = nondegeneracy_check(1, &grid, &q, 0.5, 20, 1).unwrap();
    assert_eq!(r.cells_per_side, 64);
    assert!(r.b_holds, "{r:?}");
    assert!(r.a_min >= 1.0 - 5.0 / 64.0, "{r:?}");
    assert!(nondegeneracy_check(1, &grid, &q, 1.5, 20, 1).is_err());
}
