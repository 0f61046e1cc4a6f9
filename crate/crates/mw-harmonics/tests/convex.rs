use approx::assert_abs_diff_eq;
use mw_harmonics::convex::{
    aumann_average, body_norm, caratheodory_decompose, contains, john_ellipsoid, Body, BodyField, Support,
};
use mw_harmonics::grid::CellGrid;
use mw_harmonics::linalg::apply_norm;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(v))
}

fn ellipsoid(v: &[f64]) -> Body {
    Body::ellipsoid(diag(v)).unwrap()
}

/// `max_θ h(cos θ, sin θ)` on a fine angle sweep.
fn sweep_norm(b: &Body, steps: usize) -> f64 {
    (0..steps)
        .map(|k| {
            let t = std::f64::consts::PI * k as f64 / steps as f64;
            b.support(&[t.cos(), t.sin()])
        })
        .fold(0.0, f64::max)
}

#[test]
fn support_examples() {
    assert_abs_diff_eq!(ellipsoid(&[2.0, 1.0]).support(&[1.0, 0.0]), 2.0, epsilon = 1e-12);
    let seg = Body::hull(vec![vec![1.0, 1.0]]).unwrap();
    assert_abs_diff_eq!(seg.support(&[1.0, 0.0]), 1.0, epsilon = 1e-12);
    let two = Body::sum(vec![Body::ball(3), Body::ball(3)]).unwrap();
    for v in [[1.0, 0.0, 0.0], [0.6, 0.0, 0.8], [0.0, -1.0, 0.0]] {
        assert_abs_diff_eq!(two.support(&v), 2.0, epsilon = 1e-12);
    }
}

#[test]
fn norm_examples() {
    assert_abs_diff_eq!(body_norm(&ellipsoid(&[2.0, 1.0])).value, 2.0, epsilon = 1e-9);
    assert_abs_diff_eq!(body_norm(&Body::segment(&[3.0, 4.0])).value, 5.0, epsilon = 1e-9);
    let b = Body::sum(vec![Body::ball(2), Body::segment(&[1.0, 0.0])]).unwrap();
    let est = body_norm(&b).value;
    let oracle = sweep_norm(&b, 100_000);
    assert!(est <= 2.0 + 1e-12 && est >= 2.0 - 1e-6, "{est}");
    assert_abs_diff_eq!(est, oracle, epsilon = 1e-6);
}

#[test]
fn john_of_square_and_diamond() {
    let square = Body::hull(vec![vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
    let j = john_ellipsoid(&square).unwrap();
    assert!((&j.a - DMatrix::<f64>::identity(2, 2)).amax() < 1e-5);
    assert!(j.c_out / j.c_in <= 2f64.sqrt() * (1.0 + 1e-5));

    let diamond = Body::hull(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let j = john_ellipsoid(&diamond).unwrap();
    let s = j.a[(0, 0)];
    assert!((&j.a - DMatrix::<f64>::identity(2, 2) * s).amax() < 1e-5);
    assert!(j.c_out / j.c_in <= 2f64.sqrt() * (1.0 + 1e-5));
}

#[test]
fn john_containment_on_random_hulls() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..50 {
        let n = 1 + case % 3;
        let k = n + 1 + rng.random_range(0..4);
        let points: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let b = Body::hull(points.clone()).unwrap();
        let j = john_ellipsoid(&b).unwrap();
        assert_eq!(j.rank, n, "case {case}");
        let inv = j.inverse();
        // Outer: every vertex lies in c_out * E.
        for p in &points {
            assert!(apply_norm(&inv, p) <= j.c_out * (1.0 + 1e-9), "case {case}");
        }
        // Inner: sampled boundary points of c_in * E lie in the hull.
        for _ in 0..40 {
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let u = nalgebra::DVector::from_iterator(n, u.iter().map(|x| x / norm));
            let x = (&j.a * u) * j.c_in;
            assert!(contains(&b, x.as_slice(), 1e-7).unwrap(), "case {case}");
        }
    }
}

#[test]
fn caratheodory_examples() {
    let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]];
    let terms = caratheodory_decompose(&pts, &[0.5, 0.5]).unwrap();
    assert!(terms.len() <= 3);
    let sum: Vec<f64> = (0..2).map(|i| terms.iter().map(|(t, u)| t * u[i]).sum()).collect();
    assert_abs_diff_eq!(sum[0], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(sum[1], 0.5, epsilon = 1e-12);
    let vertex = caratheodory_decompose(&pts, &[1.0, 1.0]).unwrap();
    assert_eq!(vertex.len(), 1);
    assert_abs_diff_eq!(vertex[0].0, 1.0, epsilon = 1e-12);
}

#[test]
fn caratheodory_random_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let n = rng.random_range(1..=4);
        let k = n + 2 + rng.random_range(0..6);
        let points: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut w: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let target: Vec<f64> = (0..n).map(|i| (0..k).map(|j| w[j] * points[j][i]).sum()).collect();
        let terms = caratheodory_decompose(&points, &target).unwrap();
        assert!(terms.len() <= n + 1);
        assert!(terms.iter().all(|(t, _)| *t >= 0.0));
        assert_abs_diff_eq!(terms.iter().map(|(t, _)| t).sum::<f64>(), 1.0, epsilon = 1e-10);
        for i in 0..n {
            let r: f64 = terms.iter().map(|(t, u)| t * u[i]).sum();
            assert!((r - target[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn aumann_examples() {
    let grid = CellGrid::unit(1, 2);
    let q = grid.domain();
    let balls = BodyField::new(grid, vec![Body::ball(2); 4]).unwrap();
    let avg = aumann_average(&balls, &q).unwrap();
    let half = BodyField::new(grid, vec![Body::ball(2), Body::ball(2), Body::zero(2), Body::zero(2)]).unwrap();
    let avg_half = aumann_average(&half, &q).unwrap();
    for k in 0..12 {
        let t = k as f64 * 0.5;
        let v = [t.cos(), t.sin()];
        assert_abs_diff_eq!(avg.support(&v), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(avg_half.support(&v), 0.5, epsilon = 1e-12);
    }
}

#[test]
fn aumann_norm_is_two_sided() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = CellGrid::unit(1, 3);
    for _ in 0..20 {
        let n = rng.random_range(1..=3);
        let bodies: Vec<Body> = (0..grid.n_cells())
            .map(|_| {
                let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
                Body::ellipsoid(&m * m.transpose() + DMatrix::identity(n, n) * 0.01).unwrap()
            })
            .collect();
        let avg_norm: f64 = bodies.iter().map(|b| body_norm(b).value).sum::<f64>() / bodies.len() as f64;
        let f = BodyField::new(grid, bodies).unwrap();
        let norm = body_norm(&aumann_average(&f, &grid.domain()).unwrap()).value;
        assert!(norm <= avg_norm * (1.0 + 1e-9));
        assert!(norm >= avg_norm / n as f64 * (1.0 - 1e-9));
    }
}

#[test]
fn membership_examples() {
    let ball = Body::ball(2);
    assert!(contains(&ball, &[0.5, 0.0], 0.0).unwrap());
    assert!(!contains(&ball, &[1.1, 0.0], 0.0).unwrap());
    let sum = Body::sum(vec![ellipsoid(&[2.0, 0.5]), ellipsoid(&[0.3, 1.5])]).unwrap();
    let v = [0.6, 0.8];
    let u = sum.support_point(&v);
    assert_abs_diff_eq!(u[0] * v[0] + u[1] * v[1], sum.support(&v), epsilon = 1e-12);
    assert!(contains(&sum, &u, 1e-6).unwrap());
    assert!(!contains(&sum, &[u[0] * 1.01, u[1] * 1.01], 1e-6).unwrap());
}
