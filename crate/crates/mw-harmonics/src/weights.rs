//! Piecewise-constant matrix weights and their reducing operators.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convex::{john_of_points, JohnOptions};
use crate::error::{Error, Result};
use crate::geometry::Cube;
use crate::grid::CellGrid;
use crate::linalg::{self, apply_norm, min_eigenvalue, sym_expm};
use crate::nets::{default_count, full_sphere_net};
use crate::tensor::tensor_matrix;

pub const EPS_PD: f64 = 1e-10;
pub const SYM_TOL: f64 = 1e-12;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Symmetric positive-definite matrix per grid cell, with cached inverses.
#[derive(Clone, Debug)]
pub struct MatrixWeightField {
    id: u64,
    grid: CellGrid,
    n: usize,
    mats: Vec<DMatrix<f64>>,
    inv: Vec<DMatrix<f64>>,
}

impl MatrixWeightField {
    pub fn new(grid: CellGrid, mats: Vec<DMatrix<f64>>) -> Result<Self> {
        if mats.len() != grid.n_cells() {
            return Err(Error::Dimension { expected: grid.n_cells(), got: mats.len() });
        }
        let n = mats[0].nrows();
        let mut clean = Vec::with_capacity(mats.len());
        let mut inv = Vec::with_capacity(mats.len());
        for (cell, m) in mats.into_iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension { expected: n, got: m.nrows() });
            }
            let defect = (&m - m.transpose()).amax();
            if defect > SYM_TOL {
                return Err(Error::NotSymmetric { cell, defect });
            }
            let m = linalg::symmetrize(&m);
            let min_eig = min_eigenvalue(&m);
            if !(min_eig >= EPS_PD) {
                return Err(Error::NotPositiveDefinite { cell, min_eig });
            }
            inv.push(linalg::symmetrize(&m.clone().try_inverse().expect("positive definite")));
            clean.push(m);
        }
        Ok(MatrixWeightField { id: fresh_id(), grid, n, mats: clean, inv })
    }

    pub fn from_scalar(grid: CellGrid, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect())
    }

    pub fn constant(grid: CellGrid, m: DMatrix<f64>) -> Result<Self> {
        Self::new(grid, vec![m; grid.n_cells()])
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn at(&self, cell: usize) -> &DMatrix<f64> {
        &self.mats[cell]
    }

    pub fn inv_at(&self, cell: usize) -> &DMatrix<f64> {
        &self.inv[cell]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    pub fn inverse(&self) -> Self {
        MatrixWeightField { id: fresh_id(), grid: self.grid, n: self.n, mats: self.inv.clone(), inv: self.mats.clone() }
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.grid, self.mats.iter().map(|m| m * c).collect())
    }

    /// Scalar weight `x ↦ |W(x) u|`.
    pub fn apply_norms(&self, u: &[f64]) -> Vec<f64> {
        self.mats.iter().map(|m| apply_norm(m, u)).collect()
    }

    /// CSV with one row per cell: index followed by the row-major entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell");
        for i in 0..self.n {
            for j in 0..self.n {
                let _ = write!(out, ",m{i}{j}");
            }
        }
        out.push('\n');
        for (c, m) in self.mats.iter().enumerate() {
            let _ = write!(out, "{c}");
            for i in 0..self.n {
                for j in 0..self.n {
                    let _ = write!(out, ",{:.12e}", m[(i, j)]);
                }
            }
            out.push('\n');
        }
        out
    }
}

fn default_n() -> usize {
    1
}

/// Generators for test weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Identity { n: usize },
    Constant { matrix: Vec<Vec<f64>> },
    /// `|x - x0|^alpha · I`.
    ScalarPower {
        #[serde(default = "default_n")]
        n: usize,
        alpha: f64,
        x0: Vec<f64>,
    },
    /// `diag(|x - x0|^{alpha_k})`.
    DiagonalPower { alphas: Vec<f64>, x0: Vec<f64> },
    /// `R(θ(x)) D(x) R(θ(x))ᵀ` in the plane, `θ(x) = 2π freq Σ x_i`, `D` a diagonal power.
    Rotating { alphas: Vec<f64>, x0: Vec<f64>, freq: f64 },
    /// `exp(H(x))` for a smooth random symmetric `H` with Lipschitz constant about `lipschitz`.
    RandomLogLipschitz { n: usize, seed: u64, lipschitz: f64 },
    /// Independent random SPD matrices per cell with condition numbers up to `spread`.
    RandomCells { n: usize, seed: u64, spread: f64 },
    /// Explicit scalar cell values.
    ScalarCells { values: Vec<f64> },
}

fn dist(x: &[f64], x0: &[f64]) -> f64 {
    x.iter().zip(x0.iter().chain(std::iter::repeat(&0.0))).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    (&m + m.transpose()) * 0.5
}

fn rotation(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Random SPD matrix `Q diag(λ) Qᵀ` with `λ` log-uniform in `[1/sqrt(spread), sqrt(spread)]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> DMatrix<f64> {
    let h = random_symmetric(rng, n);
    let q = linalg::sym_eigen(&h).eigenvectors;
    let half = spread.max(1.0).ln() / 2.0;
    let lam = DVector::from_fn(n, |_, _| (half * (rng.random::<f64>() * 2.0 - 1.0)).exp());
    linalg::symmetrize(&(&q * DMatrix::from_diagonal(&lam) * q.transpose()))
}

pub fn make_weight(spec: &WeightSpec, grid: CellGrid) -> Result<MatrixWeightField> {
    let centers: Vec<Vec<f64>> = (0..grid.n_cells()).map(|c| grid.center(c)).collect();
    let mats: Vec<DMatrix<f64>> = match spec {
        WeightSpec::Identity { n } => vec![DMatrix::identity(*n, *n); grid.n_cells()],
        WeightSpec::Constant { matrix } => {
            let n = matrix.len();
            if matrix.iter().any(|r| r.len() != n) {
                return Err(Error::Invalid("constant weight matrix must be square".into()));
            }
            let m = DMatrix::from_row_iterator(n, n, matrix.iter().flatten().copied());
            vec![m; grid.n_cells()]
        }
        WeightSpec::ScalarPower { n, alpha, x0 } => {
            centers.iter().map(|x| DMatrix::identity(*n, *n) * dist(x, x0).powf(*alpha)).collect()
        }
        WeightSpec::DiagonalPower { alphas, x0 } => centers
            .iter()
            .map(|x| {
                let r = dist(x, x0);
                DMatrix::from_diagonal(&DVector::from_iterator(alphas.len(), alphas.iter().map(|a| r.powf(*a))))
            })
            .collect(),
        WeightSpec::Rotating { alphas, x0, freq } => {
            if alphas.len() != 2 {
                return Err(Error::Invalid("rotating weights are 2x2".into()));
            }
            centers
                .iter()
                .map(|x| {
                    let r = dist(x, x0);
                    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![r.powf(alphas[0]), r.powf(alphas[1])]));
                    let rot = rotation(std::f64::consts::TAU * freq * x.iter().sum::<f64>());
                    linalg::symmetrize(&(&rot * d * rot.transpose()))
                })
                .collect()
        }
        WeightSpec::RandomLogLipschitz { n, seed, lipschitz } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let side = 2f64.powi(grid.side_log2);
            let modes: Vec<(DMatrix<f64>, Vec<f64>, f64)> = (1..=3)
                .map(|k| {
                    let s = random_symmetric(&mut rng, *n) * (lipschitz / (std::f64::consts::TAU * k as f64));
                    let xi: Vec<f64> = (0..grid.d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                    (s, xi, rng.random::<f64>() * std::f64::consts::TAU)
                })
                .collect();
            let base = random_symmetric(&mut rng, *n) * 0.5;
            centers
                .iter()
                .map(|x| {
                    let mut h = base.clone();
                    for (k, (s, xi, phi)) in modes.iter().enumerate() {
                        let t: f64 = xi.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / side;
                        h += s * (std::f64::consts::TAU * (k + 1) as f64 * t + phi).sin();
                    }
                    sym_expm(&h)
                })
                .collect()
        }
        WeightSpec::RandomCells { n, seed, spread } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..grid.n_cells()).map(|_| random_spd(&mut rng, *n, *spread)).collect()
        }
        WeightSpec::ScalarCells { values } => {
            if values.len() != grid.n_cells() {
                return Err(Error::Dimension { expected: grid.n_cells(), got: values.len() });
            }
            values.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect()
        }
    };
    MatrixWeightField::new(grid, mats)
}

/// Cellwise Kronecker product `W_1 ⊗ ... ⊗ W_m`.
pub fn tensor_weight(ws: &[&MatrixWeightField]) -> Result<MatrixWeightField> {
    let first = ws.first().ok_or(Error::Empty("weights"))?;
    for w in ws {
        w.grid.same_as(&first.grid)?;
    }
    let mats = (0..first.grid.n_cells())
        .map(|c| tensor_matrix(&ws.iter().map(|w| &w.mats[c]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    MatrixWeightField::new(first.grid, mats)
}

/// `2^{(1/p - 1)_+}`.
pub fn quasi_triangle_constant(p: f64) -> f64 {
    2f64.powf((1.0 / p - 1.0).max(0.0))
}

/// `q(u) = (avg_Q |W(x) u|^p)^{1/p}`, or the maximum over cells for `p = ∞`.
pub fn local_quasinorm(w: &MatrixWeightField, cells: &[usize], p: f64, u: &[f64]) -> f64 {
    if p.is_infinite() {
        cells.iter().map(|&c| apply_norm(&w.mats[c], u)).fold(0.0, f64::max)
    } else {
        let s: f64 = cells.iter().map(|&c| apply_norm(&w.mats[c], u).powf(p)).sum();
        (s / cells.len() as f64).powf(1.0 / p)
    }
}

/// SPD `A` with `‖A u‖` comparable to `q(u)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducingOperator {
    #[serde(with = "linalg::serde_matrix")]
    pub a: DMatrix<f64>,
    pub weight_id: u64,
    pub cube: Cube,
    pub p: f64,
    pub tau: f64,
    /// `min ‖Au‖ / q(u)` on the verification net.
    pub lower_ratio: f64,
    /// `max ‖Au‖ / q(u)` on the verification net.
    pub upper_ratio: f64,
    /// Guaranteed lower constant `K_p^{-n}`.
    pub lower_bound: f64,
    /// Target upper constant `sqrt(n) (1 + tau)`.
    pub upper_bound: f64,
    pub verified_directions: usize,
    pub ridge_applied: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducerOptions {
    pub tau: f64,
    pub directions: Option<usize>,
    pub seed: u64,
    pub refine_rounds: usize,
}

impl Default for ReducerOptions {
    fn default() -> Self {
        ReducerOptions { tau: 1e-6, directions: None, seed: 0x7265_6475, refine_rounds: 12 }
    }
}

type CacheKey = (u64, Cube, u64, u64);

/// Memoizing constructor of reducing operators.
pub struct Reducer {
    pub opts: ReducerOptions,
    cache: RwLock<HashMap<CacheKey, Arc<ReducingOperator>>>,
}

impl Reducer {
    pub fn new(opts: ReducerOptions) -> Self {
        Reducer { opts, cache: RwLock::new(HashMap::new()) }
    }

    pub fn global() -> &'static Reducer {
        static GLOBAL: OnceLock<Reducer> = OnceLock::new();
        GLOBAL.get_or_init(|| Reducer::new(ReducerOptions::default()))
    }

    pub fn cached(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    pub fn reduce(&self, w: &MatrixWeightField, q: &Cube, p: f64) -> Result<Arc<ReducingOperator>> {
        if !(p > 0.0) {
            return Err(Error::Exponent(format!("reducing exponent {p} must be positive")));
        }
        let key = (w.id, q.clone(), p.to_bits(), self.opts.tau.to_bits());
        if let Some(r) = self.cache.read().unwrap().get(&key) {
            return Ok(r.clone());
        }
        let cells = w.grid.cells_of(q)?;
        let r = Arc::new(reduce_cells(w, &cells, q.clone(), p, &self.opts)?);
        self.cache.write().unwrap().entry(key).or_insert_with(|| r.clone());
        Ok(r)
    }
}

pub fn reducing_operator(w: &MatrixWeightField, q: &Cube, p: f64) -> Result<Arc<ReducingOperator>> {
    Reducer::global().reduce(w, q, p)
}

fn reduce_cells(w: &MatrixWeightField, cells: &[usize], cube: Cube, p: f64, opts: &ReducerOptions) -> Result<ReducingOperator> {
    let n = w.n;
    let q = |u: &[f64]| local_quasinorm(w, cells, p, u);
    let count = opts.directions.unwrap_or_else(|| default_count(n));
    let john_opts = JohnOptions { tau: opts.tau, ..JohnOptions::default() };
    let boundary = |u: &DVector<f64>| -> Vec<f64> {
        let s = q(u.as_slice());
        u.iter().map(|x| x / s).collect()
    };
    let mut samples: Vec<Vec<f64>> = full_sphere_net(n, count, opts.seed).iter().map(boundary).collect();
    let target = (n as f64).sqrt() * (1.0 + opts.tau);
    let mut john = john_of_points(n, &samples, &john_opts)?;
    let mut ridge_applied = false;
    let invert = |a: &DMatrix<f64>, ridge: &mut bool| -> DMatrix<f64> {
        let e = linalg::sym_eigen(a);
        let max = e.eigenvalues.amax();
        if e.eigenvalues.min() <= 1e-12 * max {
            *ridge = true;
        }
        let d = DMatrix::from_diagonal(&e.eigenvalues.map(|x| 1.0 / x.max(1e-12 * max)));
        linalg::symmetrize(&(&e.eigenvectors * d * e.eigenvectors.transpose()))
    };
    let mut a = invert(&john.a, &mut ridge_applied);
    // Refinement chases violations above sampling noise only.
    let refine_at = target * (1.0 + 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x636c_696d);
    let mut clean = 0;
    for round in 0..opts.refine_rounds {
        let cand = full_sphere_net(n, 8 * count, opts.seed.wrapping_add(1 + round as u64));
        let ratio = |a: &DMatrix<f64>, u: &[f64]| apply_norm(a, u) / q(u);
        let mut scored: Vec<(f64, Vec<f64>)> =
            cand.iter().map(|u| (ratio(&a, u.as_slice()), u.as_slice().to_vec())).collect();
        scored.sort_by(|x, y| y.0.total_cmp(&x.0));
        let mut bad: Vec<Vec<f64>> = Vec::new();
        for (r0, u0) in scored.iter().take(16) {
            // Local ascent on the ratio finds corners of the unit ball missed by the net.
            let (mut r, mut u) = (*r0, u0.clone());
            let mut step = 0.05;
            while step > 1e-7 {
                let mut w: Vec<f64> = u.iter().map(|x| x + step * (rng.random::<f64>() - 0.5)).collect();
                let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                w.iter_mut().for_each(|x| *x /= wn);
                let rw = ratio(&a, &w);
                if rw > r {
                    r = rw;
                    u = w;
                } else {
                    step *= 0.85;
                }
            }
            if r > refine_at {
                bad.push(boundary(&DVector::from_vec(u)));
            }
        }
        bad.extend(scored.iter().filter(|s| s.0 > refine_at).map(|s| boundary(&DVector::from_vec(s.1.clone()))));
        if bad.is_empty() {
            // Narrow peaks of the ratio can hide between net points; stop after two clean nets.
            clean += 1;
            if clean == 2 {
                break;
            }
            continue;
        }
        clean = 0;
        samples.extend(bad);
        john = john_of_points(n, &samples, &john_opts)?;
        a = invert(&john.a, &mut ridge_applied);
    }
    // Grow the inner ellipsoid until it touches the q-ball; both inclusions survive.
    let ratio = |a: &DMatrix<f64>, u: &[f64]| apply_norm(a, u) / q(u);
    let cand = full_sphere_net(n, 8 * count, opts.seed ^ 0x6c6f_7765);
    let mut scored: Vec<(f64, Vec<f64>)> = cand.iter().map(|u| (ratio(&a, u.as_slice()), u.as_slice().to_vec())).collect();
    scored.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut lo_seen = scored.first().map_or(1.0, |s| s.0);
    for (r0, u0) in scored.iter().take(16) {
        let (mut r, mut u) = (*r0, u0.clone());
        let mut step = 0.05;
        while step > 1e-7 {
            let mut w: Vec<f64> = u.iter().map(|x| x + step * (rng.random::<f64>() - 0.5)).collect();
            let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.iter_mut().for_each(|x| *x /= wn);
            let rw = ratio(&a, &w);
            if rw < r {
                r = rw;
                u = w;
            } else {
                step *= 0.85;
            }
        }
        lo_seen = lo_seen.min(r);
    }
    let grow = (lo_seen * (1.0 - 1e-4)).max(1.0);
    let a = a / grow;
    let verify = full_sphere_net(n, count, opts.seed ^ 0x7665_7269_6679);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for u in &verify {
        let r = apply_norm(&a, u.as_slice()) / q(u.as_slice());
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(ReducingOperator {
        a,
        weight_id: w.id,
        cube,
        p,
        tau: opts.tau,
        lower_ratio: lo,
        upper_ratio: hi,
        lower_bound: quasi_triangle_constant(p).powi(-(n as i32)),
        upper_bound: target,
        verified_directions: verify.len(),
        ridge_applied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_reduces_to_identity() {
        let g = CellGrid::unit(1, 3);
        let w = make_weight(&WeightSpec::Identity { n: 2 }, g).unwrap();
        for p in [0.5, 1.0, 2.0, f64::INFINITY] {
            let r = reducing_operator(&w, &g.domain(), p).unwrap();
            assert!(r.lower_ratio >= 1.0 - 1e-12, "p={p}: {}", r.lower_ratio);
            assert!(r.upper_ratio <= r.upper_bound, "p={p}: {}", r.upper_ratio);
        }
    }

    #[test]
    fn scalar_reduction_is_exact() {
        let g = CellGrid::unit(1, 1);
        let w = MatrixWeightField::from_scalar(g, &[1.0, 4.0]).unwrap();
        let r = reducing_operator(&w, &g.domain(), 2.0).unwrap();
        assert!((r.a[(0, 0)] - 8.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn non_spd_is_rejected_with_cell() {
        let g = CellGrid::unit(1, 1);
        let err = MatrixWeightField::from_scalar(g, &[1.0, -1.0]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { cell: 1, .. }));
    }
}
