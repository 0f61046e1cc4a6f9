//! Multilinear Calderón–Zygmund operators on the cell grid: kernels and their moduli,
//! the principal-value discretization, grand maximal operators, the CZ decomposition,
//! stopping-time sparse domination, the convex-body sparse operator and the
//! non-degeneracy check for the first-coordinate Riesz kernel.
//!
//! `T(f⃗)(x) = Σ K(x, y⃗) Π_j f_j(y_j) vol^m` over cell tuples `y⃗`, evaluated at cell
//! centers; the diagonal tuple, every cell equal to the cell of `x`, is skipped.

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convex::{hull_sum_contains, net_contains, segment_average, Body, BodyField, LazySum, Support, TensorBody};
use crate::error::{Error, Result};
use crate::geometry::{coord_from_f64, is_eta_sparse, is_martingale_sparse, maximal_cubes, Coord, Cube, SparseFamily};
use crate::grid::{CellGrid, ScalarField, VectorField};
use crate::maximal::{eta_maximal, john_basis, lp_norm, multilinear_maximal, Input};
use crate::muckenhoupt::{recip, ExponentConfig};
use crate::nets::{default_count, full_sphere_net};
use crate::par;
use crate::tensor::tensor_vector;
use crate::weights::{tensor_weight, MatrixWeightField};

/// Modulus of continuity `ω` of a kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Modulus {
    /// `ω(t) = t^alpha`, `0 < alpha ≤ 1`.
    Power { alpha: f64 },
    /// `ω(t) = log(e/t)^{-power}` for `t ≤ 1` and `1` beyond.
    InverseLog { power: f64 },
}

impl Modulus {
    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match *self {
            Modulus::Power { alpha } => t.powf(alpha),
            Modulus::InverseLog { power } => {
                if t >= 1.0 {
                    1.0
                } else {
                    (1.0 - t.ln()).powf(-power)
                }
            }
        }
    }

    /// `ω(e^{-s})`, usable far below the smallest positive double.
    pub fn eval_log(&self, s: f64) -> f64 {
        match *self {
            Modulus::Power { alpha } => (-alpha * s).exp(),
            Modulus::InverseLog { power } => {
                if s <= 0.0 {
                    1.0
                } else {
                    (1.0 + s).powf(-power)
                }
            }
        }
    }

    /// `sup_t ω(2t)/ω(t)`.
    pub fn doubling(&self) -> f64 {
        match *self {
            Modulus::Power { alpha } => 2f64.powf(alpha),
            Modulus::InverseLog { power } => (1.0 + LN_2).powf(power),
        }
    }

    /// Largest `ω(2t)/ω(t)` on a geometric sample of `(0, 2]`, and whether `ω` increased
    /// along the sample.
    pub fn sampled_doubling(&self, samples: usize) -> (f64, bool) {
        let mut worst = 0.0f64;
        let mut increasing = true;
        let mut prev = 0.0;
        for i in 0..samples {
            let t = 2f64.powf(1.0 - 40.0 * (samples - 1 - i) as f64 / samples.max(2) as f64);
            let (a, b) = (self.eval(t), self.eval(2.0 * t));
            if a > 0.0 {
                worst = worst.max(b / a);
            }
            increasing &= a >= prev;
            prev = a;
        }
        (worst, increasing)
    }

    pub fn check(&self) -> Result<()> {
        let ok = match *self {
            Modulus::Power { alpha } => alpha > 0.0 && alpha <= 1.0,
            Modulus::InverseLog { power } => power > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("modulus {self:?} out of range")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiniValue {
    pub value: f64,
    /// Richardson estimate of the quadrature error plus the extrapolated tail.
    pub error: f64,
    pub pieces: usize,
}

const DINI_PIECES: usize = 1100;

/// `∫_0^1 ω(t) dt/t` by composite Simpson rules (`2^level` panels per piece) on the
/// pieces `s ∈ [0,1], [1,2], [2,4], ...` of `s = log(1/t)`.
pub fn dini(omega: impl Fn(f64) -> f64, level: u32) -> Result<DiniValue> {
    dini_log(|s| omega((-s).exp()), level)
}

/// [`dini`] for a modulus, evaluated in logarithmic scale throughout.
pub fn dini_modulus(omega: &Modulus, level: u32) -> Result<DiniValue> {
    dini_log(|s| omega.eval_log(s), level)
}

fn simpson(g: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut s = g(a) + g(b);
    for i in 1..panels {
        s += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn dini_log(g: impl Fn(f64) -> f64, level: u32) -> Result<DiniValue> {
    if level == 0 || level > 20 {
        return Err(Error::Invalid(format!("quadrature level {level} outside 1..=20")));
    }
    let fine = 1usize << level.max(1);
    let coarse = (fine / 2).max(2);
    let (mut total, mut err) = (0.0f64, 0.0f64);
    let mut prev = f64::INFINITY;
    for k in 0..DINI_PIECES {
        let (a, b) = if k == 0 { (0.0, 1.0) } else { (2f64.powi(k as i32 - 1), 2f64.powi(k as i32)) };
        let sf = simpson(&g, a, b, fine);
        let sc = simpson(&g, a, b, coarse);
        let piece = sf + (sf - sc) / 15.0;
        if !piece.is_finite() || piece < -1e-300 {
            return Err(Error::Divergent(format!("integrand not finite and nonnegative on [{a}, {b}]")));
        }
        total += piece;
        err += (sf - sc).abs() / 15.0;
        if k >= 4 && piece <= 1e-14 * total {
            let r = if prev > 0.0 { (piece / prev).min(0.99) } else { 0.0 };
            err += piece * r / (1.0 - r);
            return Ok(DiniValue { value: total, error: err, pieces: k + 1 });
        }
        prev = piece;
    }
    Err(Error::Divergent(format!("partial integral {total} still growing after {DINI_PIECES} dyadic pieces")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Zero,
    /// `Σ_j (x¹ - y_j¹) / (Σ_j |x - y_j|)^{md+1}`.
    Riesz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub m: usize,
    pub d: usize,
    pub kind: KernelKind,
    pub modulus: Modulus,
    pub size_constant: f64,
    pub smoothness_constant: f64,
    /// `C_K = max(size, smoothness)`.
    pub constant: f64,
    pub dini: f64,
}

pub fn riesz_kernel(m: usize, d: usize) -> Result<KernelSpec> {
    if m == 0 || d == 0 {
        return Err(Error::Invalid("riesz kernel needs m >= 1 and d >= 1".into()));
    }
    let md = (m * d) as i32;
    let two_m = 2.0 * m as f64;
    let size = two_m.powi(md);
    let smooth = m as f64 * (md + 2) as f64 * two_m.powi(2 * (md + 1));
    let modulus = Modulus::Power { alpha: 1.0 };
    Ok(KernelSpec {
        m,
        d,
        kind: KernelKind::Riesz,
        modulus,
        size_constant: size,
        smoothness_constant: smooth,
        constant: size.max(smooth),
        dini: dini_modulus(&modulus, 8)?.value,
    })
}

pub fn zero_kernel(m: usize, d: usize) -> KernelSpec {
    KernelSpec {
        m,
        d,
        kind: KernelKind::Zero,
        modulus: Modulus::Power { alpha: 1.0 },
        size_constant: 0.0,
        smoothness_constant: 0.0,
        constant: 0.0,
        dini: 1.0,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `Σ_{k,ℓ=0}^m |y_k - y_ℓ|` with `y_0 = x`.
fn pair_sum(x: &[f64], ys: &[&[f64]]) -> f64 {
    let mut pts: Vec<&[f64]> = vec![x];
    pts.extend_from_slice(ys);
    let mut s = 0.0;
    for a in &pts {
        for b in &pts {
            s += dist(a, b);
        }
    }
    s
}

impl KernelSpec {
    pub fn eval(&self, x: &[f64], ys: &[&[f64]]) -> f64 {
        match self.kind {
            KernelKind::Zero => 0.0,
            KernelKind::Riesz => {
                let (mut num, mut den) = (0.0, 0.0);
                for y in ys {
                    num += x[0] - y[0];
                    den += dist(x, y);
                }
                if den == 0.0 {
                    0.0
                } else {
                    num / den.powi((self.m * self.d + 1) as i32)
                }
            }
        }
    }

    fn random_tuple(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..=self.m)
            .map(|_| {
                let scale = 10f64.powf(rng.random_range(-3.0..3.0));
                (0..self.d).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
            })
            .collect()
    }

    /// `max |K(x, y⃗)| (Σ|y_k - y_ℓ|)^{md}` over random tuples.
    pub fn size_ratio(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let md = (self.m * self.d) as i32;
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let t = self.random_tuple(&mut rng);
            let ys: Vec<&[f64]> = t[1..].iter().map(|v| v.as_slice()).collect();
            let p = pair_sum(&t[0], &ys);
            if p > 0.0 {
                worst = worst.max(self.eval(&t[0], &ys).abs() * p.powi(md));
            }
        }
        worst
    }

    /// `max |K(.., y_k, ..) - K(.., y_k', ..)| (Σ|y_k - y_ℓ|)^{md} / ω(|y_k - y_k'| / Σ|y_k - y_ℓ|)`
    /// over random tuples and perturbations with `|y_k - y_k'| ≤ max_ℓ |y_k - y_ℓ| / 2`.
    pub fn smoothness_ratio(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let md = (self.m * self.d) as i32;
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let t = self.random_tuple(&mut rng);
            let k = rng.random_range(0..=self.m);
            let reach = t.iter().map(|y| dist(y, &t[k])).fold(0.0, f64::max);
            if reach == 0.0 {
                continue;
            }
            let mut dir: Vec<f64> = (0..self.d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dn = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            let r = 0.5 * reach * rng.random::<f64>();
            dir.iter_mut().for_each(|x| *x *= r / dn);
            let mut t2 = t.clone();
            t2[k].iter_mut().zip(&dir).for_each(|(a, b)| *a += b);
            let eval = |t: &[Vec<f64>]| {
                let ys: Vec<&[f64]> = t[1..].iter().map(|v| v.as_slice()).collect();
                self.eval(&t[0], &ys)
            };
            let ys: Vec<&[f64]> = t[1..].iter().map(|v| v.as_slice()).collect();
            let p = pair_sum(&t[0], &ys);
            let w = self.modulus.eval(r / p);
            if w > 0.0 {
                worst = worst.max((eval(&t) - eval(&t2)).abs() * p.powi(md) / w);
            }
        }
        worst
    }
}

type Entries = Vec<(usize, f64)>;

/// Scalar kernel sums with precomputed cell centers.
struct Discrete<'a> {
    k: &'a KernelSpec,
    centers: Vec<Vec<f64>>,
    vol_m: f64,
}

impl<'a> Discrete<'a> {
    fn new(k: &'a KernelSpec, grid: &CellGrid) -> Self {
        Discrete {
            k,
            centers: (0..grid.n_cells()).map(|c| grid.center(c)).collect(),
            vol_m: grid.cell_volume().powi(k.m as i32),
        }
    }

    /// `T(g⃗)(ξ)` for factors given by their nonzero entries.
    fn value(&self, lists: &[Entries], xi: usize) -> f64 {
        if self.k.kind == KernelKind::Zero || lists.iter().any(|l| l.is_empty()) {
            return 0.0;
        }
        let m = lists.len();
        let x = &self.centers[xi];
        let mut idx = vec![0usize; m];
        let mut ys: Vec<&[f64]> = vec![&[]; m];
        let mut total = 0.0;
        'outer: loop {
            let mut skip = true;
            let mut prod = 1.0;
            for j in 0..m {
                let (c, v) = lists[j][idx[j]];
                skip &= c == xi;
                prod *= v;
                ys[j] = &self.centers[c];
            }
            if !skip {
                total += self.k.eval(x, &ys) * prod;
            }
            for j in (0..m).rev() {
                idx[j] += 1;
                if idx[j] < lists[j].len() {
                    continue 'outer;
                }
                idx[j] = 0;
            }
            break;
        }
        total * self.vol_m
    }
}

fn entries(f: &ScalarField, mask: Option<&[bool]>) -> Entries {
    f.values
        .iter()
        .enumerate()
        .filter(|&(c, &v)| v != 0.0 && mask.is_none_or(|m| m[c]))
        .map(|(c, &v)| (c, v))
        .collect()
}

fn restrict_entries(lists: &[Entries], mask: &[bool]) -> Vec<Entries> {
    lists.iter().map(|l| l.iter().copied().filter(|&(c, _)| mask[c]).collect()).collect()
}

fn mask_of(grid: &CellGrid, cells: &[usize]) -> Vec<bool> {
    let mut m = vec![false; grid.n_cells()];
    for &c in cells {
        m[c] = true;
    }
    m
}

fn check_inputs(k: &KernelSpec, grid: &CellGrid, grids: &[&CellGrid], values: &[&[f64]]) -> Result<()> {
    if grids.len() != k.m {
        return Err(Error::Dimension { expected: k.m, got: grids.len() });
    }
    if grid.d != k.d {
        return Err(Error::Dimension { expected: k.d, got: grid.d });
    }
    for g in grids {
        grid.same_as(g)?;
    }
    if values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Invalid("inputs must be finite on the grid".into()));
    }
    Ok(())
}

fn check_scalar(k: &KernelSpec, fs: &[&ScalarField]) -> Result<CellGrid> {
    let grid = fs.first().ok_or(Error::Empty("operator inputs"))?.grid;
    let grids: Vec<&CellGrid> = fs.iter().map(|f| &f.grid).collect();
    let values: Vec<&[f64]> = fs.iter().map(|f| f.values.as_slice()).collect();
    check_inputs(k, &grid, &grids, &values)?;
    Ok(grid)
}

fn check_vector(k: &KernelSpec, fs: &[&VectorField]) -> Result<CellGrid> {
    let grid = fs.first().ok_or(Error::Empty("operator inputs"))?.grid;
    let grids: Vec<&CellGrid> = fs.iter().map(|f| &f.grid).collect();
    let values: Vec<&[f64]> = fs.iter().map(|f| f.values.as_slice()).collect();
    check_inputs(k, &grid, &grids, &values)?;
    Ok(grid)
}

/// Standard-basis component entries of each factor, `lists[j][k]` for component `k`.
fn component_entries(fs: &[&VectorField], mask: Option<&[bool]>) -> Vec<Vec<Entries>> {
    fs.iter()
        .map(|f| {
            (0..f.dim)
                .map(|k| {
                    (0..f.grid.n_cells())
                        .filter(|&c| mask.is_none_or(|m| m[c]))
                        .map(|c| (c, f.get(c)[k]))
                        .filter(|e| e.1 != 0.0)
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn tensor_value(op: &Discrete, comps: &[Vec<Entries>], xi: usize) -> Vec<f64> {
    let dims: Vec<usize> = comps.iter().map(|c| c.len()).collect();
    let n: usize = dims.iter().product();
    let mut out = vec![0.0; n];
    let mut k = vec![0usize; dims.len()];
    for o in out.iter_mut() {
        let lists: Vec<Entries> = k.iter().enumerate().map(|(j, &kj)| comps[j][kj].clone()).collect();
        *o = op.value(&lists, xi);
        for j in (0..dims.len()).rev() {
            k[j] += 1;
            if k[j] < dims[j] {
                break;
            }
            k[j] = 0;
        }
    }
    out
}

/// `T̃(f⃗)(x)`, the tensor-valued extension, in the row-major tensor basis.
pub fn apply_czo(k: &KernelSpec, fs: &[&VectorField], x: usize) -> Result<Vec<f64>> {
    let grid = check_vector(k, fs)?;
    if x >= grid.n_cells() {
        return Err(Error::Invalid(format!("cell {x} outside the grid")));
    }
    let op = Discrete::new(k, &grid);
    Ok(tensor_value(&op, &component_entries(fs, None), x))
}

/// `T̃(f⃗)` at every cell.
pub fn apply_czo_field(k: &KernelSpec, fs: &[&VectorField]) -> Result<VectorField> {
    let grid = check_vector(k, fs)?;
    let op = Discrete::new(k, &grid);
    let comps = component_entries(fs, None);
    let n: usize = fs.iter().map(|f| f.dim).product();
    let rows = par::map_range(grid.n_cells(), |x| tensor_value(&op, &comps, x));
    VectorField::new(grid, n, rows.concat())
}

/// `T(f⃗)` at every cell for scalar inputs.
pub fn apply_scalar(k: &KernelSpec, fs: &[&ScalarField]) -> Result<ScalarField> {
    let grid = check_scalar(k, fs)?;
    let op = Discrete::new(k, &grid);
    let lists: Vec<Entries> = fs.iter().map(|f| entries(f, None)).collect();
    ScalarField::new(grid, par::map_range(grid.n_cells(), |x| op.value(&lists, x)))
}

#[derive(Clone, Debug)]
pub struct GrandMaximal {
    pub values: ScalarField,
    /// Cubes whose triple leaves the domain.
    pub skipped: Vec<Cube>,
}

/// `sup_{Q ∋ x} max_{ξ ∈ Q} |T(f⃗)(ξ) - T(f⃗ 1_{3Q})(ξ)|` over `cubes`; with `localized = Some(Q₀)`
/// the first term is `T(f⃗ 1_{3Q₀})` and only cubes inside `Q₀` take part.
pub fn grand_maximal(k: &KernelSpec, fs: &[&ScalarField], cubes: &[Cube], localized: Option<&Cube>) -> Result<GrandMaximal> {
    let grid = check_scalar(k, fs)?;
    let op = Discrete::new(k, &grid);
    let lists: Vec<Entries> = fs.iter().map(|f| entries(f, None)).collect();
    let (base_lists, cubes): (Vec<Entries>, Vec<&Cube>) = match localized {
        Some(q0) => {
            let cells = grid.cells_of(&q0.triple())?;
            (restrict_entries(&lists, &mask_of(&grid, &cells)), cubes.iter().filter(|q| q0.contains(q)).collect())
        }
        None => (lists.clone(), cubes.iter().collect()),
    };
    Ok(grand_from_lists(&op, &grid, &base_lists, &cubes))
}

fn grand_from_lists(op: &Discrete, grid: &CellGrid, base_lists: &[Entries], cubes: &[&Cube]) -> GrandMaximal {
    let n = grid.n_cells();
    let mut wanted = vec![false; n];
    let mut plans = Vec::with_capacity(cubes.len());
    let mut skipped = Vec::new();
    for q in cubes {
        match (grid.cells_of(q), grid.cells_of(&q.triple())) {
            (Ok(cells), Ok(triple)) => {
                cells.iter().for_each(|&c| wanted[c] = true);
                plans.push((cells, triple));
            }
            _ => skipped.push((*q).clone()),
        }
    }
    let wanted_cells: Vec<usize> = (0..n).filter(|&c| wanted[c]).collect();
    let base_vals = par::map_slice(&wanted_cells, |&c| op.value(base_lists, c));
    let mut base = vec![0.0; n];
    for (&c, v) in wanted_cells.iter().zip(base_vals) {
        base[c] = v;
    }
    let per_cube = par::map_slice(&plans, |(cells, triple)| {
        let inner = restrict_entries(base_lists, &mask_of(grid, triple));
        cells.iter().fold(0.0f64, |acc, &xi| acc.max((base[xi] - op.value(&inner, xi)).abs()))
    });
    let mut values = vec![0.0f64; n];
    for ((cells, _), v) in plans.iter().zip(per_cube) {
        for &c in cells {
            values[c] = values[c].max(v);
        }
    }
    GrandMaximal { values: ScalarField { grid: *grid, values }, skipped }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BadPart {
    pub cube: Cube,
    pub cells: Vec<usize>,
    /// `(f - ⟨f⟩_Q)` on the cells of the cube.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CZDecomposition {
    pub good: ScalarField,
    pub bad: Vec<BadPart>,
    pub cubes: Vec<Cube>,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CZCheck {
    pub reconstruction: f64,
    pub good_sup: f64,
    pub good_bound: f64,
    pub max_mean: f64,
    pub measure: f64,
    pub measure_bound: f64,
}

impl CZCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.reconstruction <= tol
            && self.good_sup <= self.good_bound * (1.0 + tol)
            && self.max_mean <= tol
            && self.measure <= self.measure_bound * (1.0 + tol)
    }
}

/// Maximal dyadic cubes of the grid with `⟨|f|⟩_Q > λ` and the induced good and bad parts.
/// The domain itself must satisfy `⟨|f|⟩ ≤ λ`.
pub fn cz_decompose(f: &ScalarField, lambda: f64) -> Result<CZDecomposition> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Invalid(format!("height {lambda} must be positive and finite")));
    }
    let grid = f.grid;
    let top = grid.domain();
    let all = grid.cells_of(&top)?;
    if f.abs_average(&all) > lambda {
        return Err(Error::Invalid(format!("height {lambda} is below the average of |f| over the domain")));
    }
    let mut cubes = Vec::new();
    let mut stack = vec![top];
    while let Some(q) = stack.pop() {
        let cells = grid.cells_of(&q)?;
        if f.abs_average(&cells) > lambda {
            cubes.push(q);
        } else if cells.len() > 1 {
            stack.extend(q.children());
        }
    }
    let mut good = f.clone();
    let mut bad = Vec::with_capacity(cubes.len());
    for q in &cubes {
        let cells = grid.cells_of(q)?;
        let avg = f.average(&cells);
        let values = cells.iter().map(|&c| f.values[c] - avg).collect();
        cells.iter().for_each(|&c| good.values[c] = avg);
        bad.push(BadPart { cube: q.clone(), cells, values });
    }
    Ok(CZDecomposition { good, bad, cubes, lambda })
}

impl CZDecomposition {
    pub fn reconstruct(&self) -> ScalarField {
        let mut out = self.good.clone();
        for b in &self.bad {
            for (&c, v) in b.cells.iter().zip(&b.values) {
                out.values[c] += v;
            }
        }
        out
    }

    pub fn check(&self, f: &ScalarField) -> CZCheck {
        let r = self.reconstruct();
        let reconstruction = r.values.iter().zip(&f.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = f.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        CZCheck {
            reconstruction: reconstruction / scale,
            good_sup: self.good.values.iter().fold(0.0, |m, v| m.max(v.abs())),
            good_bound: 2f64.powi(f.grid.d as i32) * self.lambda,
            max_mean: self
                .bad
                .iter()
                .map(|b| (b.values.iter().sum::<f64>() / b.values.len() as f64).abs() / scale)
                .fold(0.0, f64::max),
            measure: self.cubes.iter().map(|q| q.volume_f64()).sum(),
            measure_bound: f.l1() / self.lambda,
        }
    }
}

/// `Σ_{Q ∈ 𝒮, Q ∋ x} 𝒦(⊗_j ⟨F_j⟩_Q)`, stored as per-cube generators.
pub struct ConvexSparse {
    pub grid: CellGrid,
    pub dims: Vec<usize>,
    pub cubes: Vec<Cube>,
    pub generators: Vec<TensorBody>,
    pub members: Vec<Vec<usize>>,
}

pub fn convex_sparse_operator(fs: &[Input], family: &SparseFamily) -> Result<ConvexSparse> {
    let grid = *fs.first().ok_or(Error::Empty("sparse operator inputs"))?.grid();
    for f in fs {
        grid.same_as(f.grid())?;
    }
    let cells: Vec<Vec<usize>> = family.cubes.iter().map(|q| grid.cells_of(q)).collect::<Result<_>>()?;
    let generators = par::map_slice(&cells, |c| TensorBody::new(fs.iter().map(|f| f.average(c)).collect()));
    let generators = generators.into_iter().collect::<Result<Vec<_>>>()?;
    let mut members = vec![Vec::new(); grid.n_cells()];
    for (i, c) in cells.iter().enumerate() {
        c.iter().for_each(|&x| members[x].push(i));
    }
    Ok(ConvexSparse { grid, dims: fs.iter().map(|f| f.dim()).collect(), cubes: family.cubes.clone(), generators, members })
}

/// `𝒦(⊗ B_j)` as a hull when every factor has a finite vertex list.
pub fn tensor_hull(t: &TensorBody) -> Option<Body> {
    let verts: Vec<Vec<Vec<f64>>> = t
        .factors
        .iter()
        .map(|b| match b.to_hull()? {
            Body::Hull { points, .. } => Some(points),
            _ => None,
        })
        .collect::<Option<_>>()?;
    let n: usize = t.dims().iter().product();
    if verts.iter().any(|v| v.is_empty()) {
        return Some(Body::zero(n));
    }
    let mut points = Vec::new();
    let mut k = vec![0usize; verts.len()];
    'outer: loop {
        let parts: Vec<&[f64]> = k.iter().enumerate().map(|(j, &i)| verts[j][i].as_slice()).collect();
        points.push(tensor_vector(&parts).into_iter().map(|x| x * t.scale).collect());
        for j in (0..k.len()).rev() {
            k[j] += 1;
            if k[j] < verts[j].len() {
                continue 'outer;
            }
            k[j] = 0;
        }
        break;
    }
    Some(Body::Hull { dim: n, points })
}

impl ConvexSparse {
    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn body_at(&self, cell: usize) -> LazySum<&TensorBody> {
        LazySum { dim: self.dim(), parts: self.members[cell].iter().map(|&i| &self.generators[i]).collect() }
    }

    pub fn support(&self, cell: usize, v: &[f64]) -> f64 {
        self.body_at(cell).support(v)
    }

    /// Exact body field; fails when a generator factor has no finite vertex list.
    pub fn to_body_field(&self) -> Result<BodyField> {
        let hulls: Vec<Body> = self
            .generators
            .iter()
            .map(|g| tensor_hull(g).ok_or_else(|| Error::Invalid("generator factor without a finite vertex list".into())))
            .collect::<Result<_>>()?;
        let n = self.dim();
        let bodies = self
            .members
            .iter()
            .map(|ms| match ms.len() {
                0 => Body::zero(n),
                1 => hulls[ms[0]].clone(),
                _ => Body::MinkowskiSum { parts: ms.iter().map(|&i| hulls[i].clone()).collect() },
            })
            .collect();
        BodyField::new(self.grid, bodies)
    }
}

const MEMBERSHIP_SEED: u64 = 0x6d656d;

/// `inf{c ≥ 0 : u ∈ c·B} = sup_v <u, v>/h_B(v)`, maximized over the direction net of the
/// membership test and refined by a local ascent from the best net directions.
fn gauge<S: Support>(b: &S, u: &[f64]) -> f64 {
    let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if un == 0.0 {
        return 0.0;
    }
    let ratio = |v: &[f64]| {
        let p: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let h = b.support(v);
        if p <= 0.0 {
            0.0
        } else if h <= 1e-300 {
            f64::INFINITY
        } else {
            p / h
        }
    };
    let dir: Vec<f64> = u.iter().map(|x| x / un).collect();
    let mut scored: Vec<(f64, Vec<f64>)> = vec![(ratio(&dir), dir)];
    for v in full_sphere_net(u.len(), 2 * default_count(u.len()), MEMBERSHIP_SEED).iter() {
        scored.push((ratio(v.as_slice()), v.as_slice().to_vec()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = scored[0].0;
    let mut rng = ChaCha8Rng::seed_from_u64(MEMBERSHIP_SEED ^ 0x6761);
    for (r0, v0) in scored.into_iter().take(4) {
        let (mut r, mut v) = (r0, v0);
        let mut step = 0.1;
        for _ in 0..300 {
            if !r.is_finite() || step < 1e-10 {
                break;
            }
            let mut w: Vec<f64> = v.iter().map(|x| x + step * (rng.random::<f64>() - 0.5)).collect();
            let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.iter_mut().for_each(|x| *x /= wn);
            let rw = ratio(&w);
            if rw > r {
                r = rw;
                v = w;
            } else {
                step *= 0.85;
            }
        }
        best = best.max(r);
    }
    best
}

/// Bisection on exact polytope membership, starting from a lower bound of the gauge.
fn exact_gauge(parts: &[&[Vec<f64>]], u: &[f64], lower: f64) -> f64 {
    let inside = |c: f64| {
        let v: Vec<f64> = u.iter().map(|x| x / c).collect();
        hull_sum_contains(parts, &v, 0.0)
    };
    let (mut lo, mut hi) = (lower, lower * (1.0 + 1e-6));
    let mut tries = 0;
    while !inside(hi) {
        lo = hi;
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return f64::INFINITY;
        }
    }
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoppingNode {
    pub cube: Cube,
    /// Largest threshold `C₁` over the component tuples.
    pub threshold: f64,
    /// Largest `|E| / |Q|` over the component tuples.
    pub exceptional_fraction: f64,
    pub children: Vec<Cube>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CzSparse {
    pub q0: Cube,
    pub eps: f64,
    /// Stopping cubes 𝒢.
    pub stopping: Vec<Cube>,
    /// `{3Q : Q ∈ 𝒢}`.
    pub sparse: SparseFamily,
    pub nodes: Vec<StoppingNode>,
    /// Least `C` with `T̃(f⃗)(x) ∈ C·A_𝒮(f⃗)(x)` on the cells of `Q₀`.
    pub constant: f64,
    /// Children of every `Q ∈ 𝒢` fill at most `eps·|Q|`.
    pub martingale: bool,
    /// `𝒮` is `(1 - eps)/3^d`-sparse.
    pub dilated_sparse: bool,
    /// Membership `T̃(f⃗)(x) ∈ C·A_𝒮(f⃗)(x)` with tolerance `1e-6` at every cell of `Q₀`.
    pub dominated: bool,
}

impl CzSparse {
    pub fn certified(&self) -> bool {
        self.martingale && self.dilated_sparse && self.dominated
    }
}

/// Cells of `q` as a block in the order of `grid.cells_of`, with the dyadic tree below it.
fn stopping_children(grid: &CellGrid, q: &Cube, in_e: &[bool], d: usize) -> Result<Vec<Cube>> {
    let frac = 2f64.powi(-(d as i32) - 1);
    let mut out = Vec::new();
    let mut stack = q.children();
    if grid.cells_of(q)?.len() == 1 {
        return Ok(out);
    }
    while let Some(r) = stack.pop() {
        let cells = grid.cells_of(&r)?;
        let count = cells.iter().filter(|&&c| in_e[c]).count();
        if count as f64 > frac * cells.len() as f64 {
            out.push(r);
        } else if count > 0 && cells.len() > 1 {
            stack.extend(r.children());
        }
    }
    Ok(out)
}

/// Iterated stopping-time sparse domination of `T̃(f⃗)` for `f⃗` supported in `Q₀`.
///
/// At a stopping cube `Q` every factor is restricted to `3Q` and expanded in the
/// eigenbasis of the John ellipsoid of `⟨⟨f_j⟩⟩_{3Q}`. For each tuple of components the
/// exceptional set is `{ε^m M_{T,Q} > C₁ Π⟨|g_j|⟩_{3Q}} ∪ {ε|g_j| > C₁⟨|g_j|⟩_{3Q}}` with
/// `ε = eps/n` and the least `C₁` keeping `|E| < ε 2^{-d-1}|Q|`; the next stopping cubes
/// are the maximal dyadic cubes with `⟨1_E⟩ > 2^{-d-1}` over all tuples.
pub fn sparse_dominate(k: &KernelSpec, fs: &[&VectorField], q0: &Cube, eps: f64) -> Result<CzSparse> {
    let grid = check_vector(k, fs)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Invalid(format!("eps {eps} must lie in (0, 1)")));
    }
    let q0_cells = grid.cells_of(q0)?;
    grid.cells_of(&q0.triple())?;
    let inside = mask_of(&grid, &q0_cells);
    if fs.iter().any(|f| (0..grid.n_cells()).any(|c| !inside[c] && f.get(c).iter().any(|&x| x != 0.0))) {
        return Err(Error::Invalid("inputs must be supported in the top cube".into()));
    }
    let d = grid.d;
    let m = k.m;
    let dims: Vec<usize> = fs.iter().map(|f| f.dim).collect();
    let n: usize = dims.iter().product();
    let small = eps / n as f64;
    let op = Discrete::new(k, &grid);

    let mut nodes: Vec<StoppingNode> = Vec::new();
    let mut layer = vec![q0.clone()];
    while !layer.is_empty() {
        let built = par::map_slice(&layer, |q| stopping_node(&op, &grid, fs, q, small, m, &dims));
        let mut next = Vec::new();
        for node in built {
            let node = node?;
            let filled: f64 = node.children.iter().map(|c| c.volume_f64()).sum();
            if filled > eps * node.cube.volume_f64() * (1.0 + 1e-12) {
                return Err(Error::Budget(format!(
                    "children of {:?} fill {filled} of {} (largest exceptional fraction {})",
                    node.cube,
                    node.cube.volume_f64(),
                    node.exceptional_fraction
                )));
            }
            next.extend(node.children.iter().cloned());
            nodes.push(node);
        }
        layer = next;
    }
    let stopping: Vec<Cube> = nodes.iter().map(|n| n.cube.clone()).collect();
    let eps_c = coord_from_f64(eps)?;
    let martingale = is_martingale_sparse(&SparseFamily::new(stopping.clone()), &eps_c)?;
    let sparse = SparseFamily::new(stopping.iter().map(|q| q.triple()).collect());
    let eta = (Coord::from_integer(1) - eps_c) / Coord::from_integer(3i128.pow(d as u32));
    let dilated_sparse = is_eta_sparse(&sparse, &eta)?.sparse;

    let inputs: Vec<Input> = fs.iter().map(|&f| Input::Vectors(f)).collect();
    let a = convex_sparse_operator(&inputs, &sparse)?;
    let comps = component_entries(fs, None);
    let t_vals = par::map_slice(&q0_cells, |&x| tensor_value(&op, &comps, x));
    // Exact polytopes where the factors allow it; lazy tensor bodies otherwise.
    let hulls: Vec<Option<Body>> = a.generators.iter().map(tensor_hull).collect();
    let summands = |x: usize| -> LazySum<&dyn Support> {
        LazySum {
            dim: n,
            parts: a.members[x]
                .iter()
                .map(|&i| match &hulls[i] {
                    Some(h) => h as &dyn Support,
                    None => &a.generators[i] as &dyn Support,
                })
                .collect(),
        }
    };
    let points = |x: usize| -> Option<Vec<&[Vec<f64>]>> {
        a.members[x]
            .iter()
            .map(|&i| match &hulls[i] {
                Some(Body::Hull { points, .. }) => Some(points.as_slice()),
                _ => None,
            })
            .collect()
    };
    let gauges = par::map_range(q0_cells.len(), |i| {
        let x = q0_cells[i];
        let u = &t_vals[i];
        if n == 1 {
            let s = a.support(x, &[1.0]);
            let t = u[0].abs();
            return match (t == 0.0, s > 0.0) {
                (true, _) => 0.0,
                (false, true) => t / s,
                (false, false) => f64::INFINITY,
            };
        }
        let lower = gauge(&summands(x), u);
        match points(x) {
            Some(parts) if lower.is_finite() && lower > 0.0 => exact_gauge(&parts, u, lower),
            _ => lower,
        }
    });
    let constant = gauges.iter().copied().fold(0.0, f64::max);
    let member = par::map_range(q0_cells.len(), |i| {
        let x = q0_cells[i];
        let u = &t_vals[i];
        if constant == 0.0 {
            return u.iter().all(|&v| v == 0.0);
        }
        if n == 1 {
            return u[0].abs() <= (1.0 + 1e-6) * constant * a.support(x, &[1.0]);
        }
        let v: Vec<f64> = u.iter().map(|t| t / constant).collect();
        match points(x) {
            Some(parts) => hull_sum_contains(&parts, &v, 1e-6),
            None => net_contains(&summands(x), &v, 1e-6, MEMBERSHIP_SEED),
        }
    });
    let dominated = constant.is_finite() && member.into_iter().all(|b| b);
    Ok(CzSparse { q0: q0.clone(), eps, stopping, sparse, nodes, constant, martingale, dilated_sparse, dominated })
}

fn stopping_node(
    op: &Discrete,
    grid: &CellGrid,
    fs: &[&VectorField],
    q: &Cube,
    small: f64,
    m: usize,
    dims: &[usize],
) -> Result<StoppingNode> {
    let cells = grid.cells_of(q)?;
    let triple_cells = grid.cells_of(&q.triple())?;
    let triple_mask = mask_of(grid, &triple_cells);
    let d = grid.d;
    let n3 = triple_cells.len() as f64;
    let bases: Vec<Vec<Vec<f64>>> =
        fs.iter().map(|f| john_basis(&segment_average(f, &triple_cells))).collect::<Result<_>>()?;
    // comps[j][k]: ⟨f_j 1_{3Q}, e_{j,k}⟩
    let comps: Vec<Vec<ScalarField>> = fs
        .iter()
        .zip(&bases)
        .map(|(f, basis)| {
            basis
                .iter()
                .map(|e| {
                    let mut g = ScalarField::constant(*grid, 0.0);
                    for &c in &triple_cells {
                        g.values[c] = f.get(c).iter().zip(e).map(|(a, b)| a * b).sum();
                    }
                    g
                })
                .collect()
        })
        .collect();
    let subcubes = grid.dyadic_subcubes(q, cells.len().trailing_zeros() / d as u32)?;
    let sub_refs: Vec<&Cube> = subcubes.iter().collect();
    let budget = small * 2f64.powi(-(d as i32) - 1) * cells.len() as f64;
    let allowed = (budget * (1.0 + 1e-12)).floor() as usize;
    let mut threshold = 0.0f64;
    let mut fraction = 0.0f64;
    let mut found: Vec<Cube> = Vec::new();
    let n: usize = dims.iter().product();
    let mut kv = vec![0usize; m];
    for _ in 0..n {
        let g: Vec<&ScalarField> = kv.iter().enumerate().map(|(j, &kj)| &comps[j][kj]).collect();
        let avgs: Vec<f64> = g.iter().map(|gj| triple_cells.iter().map(|&c| gj.values[c].abs()).sum::<f64>() / n3).collect();
        let prod: f64 = avgs.iter().product();
        if prod > 0.0 {
            let lists: Vec<Entries> = g.iter().map(|gj| entries(gj, Some(&triple_mask))).collect();
            let gm = grand_from_lists(op, grid, &lists, &sub_refs);
            let mut v: Vec<(usize, f64)> = cells
                .iter()
                .map(|&x| {
                    let lead = small.powi(m as i32) * gm.values.values[x] / prod;
                    let own = g.iter().zip(&avgs).fold(0.0f64, |acc, (gj, a)| acc.max(small * gj.values[x].abs() / a));
                    (x, lead.max(own))
                })
                .collect();
            v.sort_by(|a, b| b.1.total_cmp(&a.1));
            // Scores within rounding of the threshold count as ties and stay outside E.
            let c1 = if allowed < v.len() { v[allowed].1 } else { 0.0 };
            let cut = c1 * (1.0 + 1e-9);
            let mut in_e = vec![false; grid.n_cells()];
            let mut count = 0;
            for &(x, val) in &v {
                if val > cut {
                    in_e[x] = true;
                    count += 1;
                }
            }
            if count as f64 > budget * (1.0 + 1e-12) {
                return Err(Error::Budget(format!("exceptional set of {count} cells exceeds {budget} in {q:?}")));
            }
            threshold = threshold.max(c1);
            fraction = fraction.max(count as f64 / cells.len() as f64);
            found.extend(stopping_children(grid, q, &in_e, d)?);
        }
        for j in (0..m).rev() {
            kv[j] += 1;
            if kv[j] < dims[j] {
                break;
            }
            kv[j] = 0;
        }
    }
    let mut children = maximal_cubes(&found);
    children.sort_by(|a, b| a.corner().cmp(b.corner()));
    Ok(StoppingNode { cube: q.clone(), threshold, exceptional_fraction: fraction, children })
}

/// `C_{m,d} = (d - 1 + (2m+1)²)^{1/2} / (m(2m-1))`.
pub fn nondegeneracy_constant(m: usize, d: usize) -> f64 {
    let (mf, df) = (m as f64, d as f64);
    (df - 1.0 + (2.0 * mf + 1.0).powi(2)).sqrt() / (mf * (2.0 * mf - 1.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub m: usize,
    pub d: usize,
    /// Cells per side of `Q`.
    pub cells_per_side: usize,
    pub constant: f64,
    /// `min_x C|T(h⃗)(x)|` over `x ∈ Q` and the sampled factorizations.
    pub a_min: f64,
    /// Least constant for which the minimum would reach 1.
    pub required_constant: f64,
    pub alpha: f64,
    /// `max |S(x, y⃗)| |Q|^m` over `x ∈ Q'`, `y⃗ ∈ Q^m`.
    pub b_max: f64,
    pub b_holds: bool,
}

/// Checks the two halves of directional non-degeneracy for the first-coordinate Riesz kernel
/// on `Q` and `Q' = Q + 2mℓ(Q)e₁`.
pub fn nondegeneracy_check(
    m: usize,
    grid: &CellGrid,
    q: &Cube,
    alpha: f64,
    factorizations: usize,
    seed: u64,
) -> Result<NondegeneracyReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha {alpha} must lie in (0, 1)")));
    }
    let d = grid.d;
    let k = riesz_kernel(m, d)?;
    let c = nondegeneracy_constant(m, d);
    let shift = *q.side() * Coord::from_integer(2 * m as i128);
    let qp = q.translate(0, &shift);
    let q_cells = grid.cells_of(q)?;
    let qp_cells = grid.cells_of(&qp)?;
    let op = Discrete::new(&k, grid);
    let vol_q = q.volume_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a_min = f64::INFINITY;
    for trial in 0..factorizations.max(1) {
        let mut factors = vec![vec![0.0; qp_cells.len()]; m];
        for i in 0..qp_cells.len() {
            let z: Vec<f64> = (0..m).map(|_| if trial == 0 { 0.0 } else { rng.random_range(-1.0..1.0) }).collect();
            let mean = z.iter().sum::<f64>() / m as f64;
            for j in 0..m {
                factors[j][i] = (z[j] - mean).exp();
            }
        }
        let lists: Vec<Entries> =
            factors.iter().map(|h| qp_cells.iter().copied().zip(h.iter().copied()).collect()).collect();
        let vals = par::map_slice(&q_cells, |&x| op.value(&lists, x).abs());
        a_min = vals.iter().fold(a_min, |acc, &v| acc.min(c * v));
    }
    let inv = vol_q.powi(-(m as i32));
    let centers: Vec<Vec<f64>> = (0..grid.n_cells()).map(|i| grid.center(i)).collect();
    let b_vals = par::map_slice(&qp_cells, |&x| {
        let mut worst = 0.0f64;
        let mut idx = vec![0usize; m];
        let count = q_cells.len().pow(m as u32);
        let mut ys: Vec<&[f64]> = vec![&[]; m];
        for _ in 0..count {
            for j in 0..m {
                ys[j] = &centers[q_cells[idx[j]]];
            }
            let s = (inv - (1.0 - alpha) * c * k.eval(&centers[x], &ys)) / alpha;
            worst = worst.max(s.abs() / inv);
            for j in (0..m).rev() {
                idx[j] += 1;
                if idx[j] < q_cells.len() {
                    break;
                }
                idx[j] = 0;
            }
        }
        worst
    });
    let b_max = b_vals.into_iter().fold(0.0, f64::max);
    let side_cells = (q.side_f64() / grid.cell_side_f64()).round() as usize;
    Ok(NondegeneracyReport {
        m,
        d,
        cells_per_side: side_cells,
        constant: c,
        a_min,
        required_constant: c / a_min,
        alpha,
        b_max,
        b_holds: b_max <= 1.0,
    })
}

/// Least `C` with `M_T(f⃗) ≤ C·𝓜(f⃗) + M_η(|T(f⃗)|)`, `η = 1/(2m)`, at every cell, the grand
/// maximal operator running over `cubes` and the other two over [`CellGrid::sliding_family`].
pub fn cotlar_fit(k: &KernelSpec, fs: &[&ScalarField], cubes: &[Cube]) -> Result<f64> {
    let grid = check_scalar(k, fs)?;
    let mt = grand_maximal(k, fs, cubes, None)?;
    let family = grid.sliding_family();
    let mm = multilinear_maximal(fs, &family)?;
    let tf = apply_scalar(k, fs)?;
    let abs_tf = ScalarField { grid, values: tf.values.iter().map(|v| v.abs()).collect() };
    let me = eta_maximal(&abs_tf, 1.0 / (2.0 * k.m as f64), &family)?;
    let mut c = 0.0f64;
    for x in 0..grid.n_cells() {
        let excess = mt.values.values[x] - me.values[x];
        if excess > 0.0 {
            if mm.values[x] == 0.0 {
                return Ok(f64::INFINITY);
            }
            c = c.max(excess / mm.values[x]);
        }
    }
    Ok(c)
}

/// `sup_λ λ^{1/m} |{|T(f⃗)| > λ}| / Π_j ‖f_j‖_1^{1/m}`, exact over the attained values.
pub fn endpoint_fit(k: &KernelSpec, fs: &[&ScalarField]) -> Result<f64> {
    let tf = apply_scalar(k, fs)?;
    let norm: f64 = fs.iter().map(|f| f.l1().powf(1.0 / k.m as f64)).product();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let mut vals: Vec<f64> = tf.values.iter().map(|v| v.abs()).filter(|&v| v > 0.0).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let vol = tf.grid.cell_volume();
    let best = vals
        .iter()
        .enumerate()
        .fold(0.0f64, |acc, (i, v)| acc.max(v.powf(1.0 / k.m as f64) * (i + 1) as f64 * vol));
    Ok(best / norm)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PointwiseFit {
    /// Least `c` with `|T(f⃗ 1_{3Q₀})| ≤ c Π|f_j| + M_{T,Q₀}(f⃗)` where `Π|f_j| > 0`.
    pub c: f64,
    /// Cells where `Π|f_j| = 0` but the bound still needs a positive multiple.
    pub uncovered: usize,
}

pub fn pointwise_fit(k: &KernelSpec, fs: &[&ScalarField], q0: &Cube) -> Result<PointwiseFit> {
    let grid = check_scalar(k, fs)?;
    let cells = grid.cells_of(q0)?;
    let family = grid.dyadic_subcubes(q0, cells.len().trailing_zeros() / grid.d as u32)?;
    let gm = grand_maximal(k, fs, &family, Some(q0))?;
    let op = Discrete::new(k, &grid);
    let mask = mask_of(&grid, &grid.cells_of(&q0.triple())?);
    let lists: Vec<Entries> = fs.iter().map(|f| entries(f, Some(&mask))).collect();
    let vals = par::map_slice(&cells, |&x| op.value(&lists, x).abs());
    let (mut c, mut uncovered) = (0.0f64, 0);
    for (&x, t) in cells.iter().zip(vals) {
        let excess = t - gm.values.values[x];
        if excess > 1e-12 * t.max(1e-300) {
            let p: f64 = fs.iter().map(|f| f.values[x].abs()).product();
            if p > 0.0 {
                c = c.max(excess / p);
            } else {
                uncovered += 1;
            }
        }
    }
    Ok(PointwiseFit { c, uncovered })
}

/// `‖T̃(f⃗)‖_{L^p_𝐖} / Π_j ‖f_j‖_{L^{p_j}_{W_j}}` with `𝐖 = ⊗W_j`.
pub fn weighted_ratio(k: &KernelSpec, fs: &[&VectorField], ws: &[&MatrixWeightField], cfg: &ExponentConfig) -> Result<f64> {
    let grid = check_vector(k, fs)?;
    if ws.len() != fs.len() || cfg.m() != fs.len() {
        return Err(Error::Dimension { expected: fs.len(), got: ws.len().min(cfg.m()) });
    }
    let tw = tensor_weight(ws)?;
    let tf = apply_czo_field(k, fs)?;
    let vol = grid.cell_volume();
    let lhs = lp_norm((0..grid.n_cells()).map(|c| crate::linalg::apply_norm(tw.at(c), tf.get(c))), cfg.p(), vol);
    let mut rhs = 1.0;
    for (j, (f, w)) in fs.iter().zip(ws).enumerate() {
        let pj = recip(cfg.p_inv[j]);
        rhs *= lp_norm((0..grid.n_cells()).map(|c| crate::linalg::apply_norm(w.at(c), f.get(c))), pj, vol);
    }
    Ok(if rhs == 0.0 { 0.0 } else { lhs / rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellGrid;

    #[test]
    fn dini_examples() {
        assert!((dini(|t| t, 8).unwrap().value - 1.0).abs() < 1e-10);
        assert!((dini(|t| t.sqrt(), 8).unwrap().value - 2.0).abs() < 1e-10);
        let v = dini_modulus(&Modulus::InverseLog { power: 2.0 }, 8).unwrap();
        assert!((v.value - 1.0).abs() < 1e-6, "{v:?}");
        assert!(matches!(dini_modulus(&Modulus::InverseLog { power: 1.0 }, 6), Err(Error::Divergent(_))));
        assert!(matches!(dini(|_| 1.0, 6), Err(Error::Divergent(_))));
    }

    #[test]
    fn riesz_values() {
        let k1 = riesz_kernel(1, 1).unwrap();
        assert_eq!(k1.eval(&[0.0], &[&[1.0]]), -1.0);
        let k2 = riesz_kernel(2, 1).unwrap();
        assert_eq!(k2.eval(&[0.0], &[&[1.0], &[1.0]]), -0.25);
        assert!(k2.size_ratio(10_000, 1) <= k2.size_constant);
        assert!(k2.smoothness_ratio(10_000, 2) <= k2.smoothness_constant);
        assert!((nondegeneracy_constant(1, 1) - 3.0).abs() < 1e-15);
        assert!((nondegeneracy_constant(2, 1) - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn off_support_riesz_value() {
        for level in [6u32, 8] {
            let grid = CellGrid::new(1, 2, level).unwrap();
            let f = ScalarField::indicator(grid, &Cube::dyadic(&[1], 0)).unwrap();
            let k = riesz_kernel(1, 1).unwrap();
            let v = apply_scalar(&k, &[&f]).unwrap().values[0];
            let h = grid.cell_side_f64();
            assert!((v + LN_2).abs() < h, "level {level}: {v}");
        }
    }

    #[test]
    fn cz_example() {
        let grid = CellGrid::unit(1, 4);
        let f = ScalarField::from_fn(grid, |x| if x[0] < 0.25 { 4.0 } else { 0.0 });
        let cz = cz_decompose(&f, 2.0).unwrap();
        assert_eq!(cz.cubes, vec![Cube::dyadic(&[0], -2)]);
        assert!(cz.bad[0].values.iter().all(|&v| v == 0.0));
        let chk = cz.check(&f);
        assert!(chk.holds(1e-12) && chk.good_sup == 4.0);
        assert!(cz_decompose(&f, 0.5).is_err());
    }

    #[test]
    fn scalar_sparse_domination() {
        let grid = CellGrid::new(1, 2, 6).unwrap();
        let q0 = Cube::dyadic(&[1], 0);
        let f = VectorField::from_scalar(&ScalarField::indicator(grid, &q0).unwrap());
        let k = riesz_kernel(1, 1).unwrap();
        let s = sparse_dominate(&k, &[&f], &q0, 0.5).unwrap();
        assert!(s.certified(), "{s:?}");
        assert!(s.constant > 0.0 && s.constant.is_finite());
    }
}
