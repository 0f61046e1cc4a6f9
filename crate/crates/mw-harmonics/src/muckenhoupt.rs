//! Multilinear Muckenhoupt characteristics: exponent calculus, the double-average
//! (Roudenko-type) evaluator, the reducing-operator evaluator, a brute-force
//! averaging-operator oracle, scalar closed forms and the Fujii–Wilson constant.
//!
//! Exponents are carried as reciprocals so that `∞` is `0.0` and negative
//! exponents are ordinary negative reciprocals.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Cube;
use crate::grid::{CellGrid, ScalarField, VectorField};
use crate::linalg::{apply_norm, op_norm, sym_pow};
use crate::par;
use crate::tensor::tensor_matrix;
use crate::weights::{tensor_weight, MatrixWeightField, Reducer};

/// `1/x` with `1/0 = ∞` and `1/∞ = 0`.
pub fn recip(x: f64) -> f64 {
    if x == 0.0 {
        f64::INFINITY
    } else if x.is_infinite() {
        0.0
    } else {
        1.0 / x
    }
}

/// Exponent data `(p⃗, r⃗, s)` and every derived exponent, all stored as reciprocals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentConfig {
    pub p_inv: Vec<f64>,
    pub r_inv: Vec<f64>,
    pub s_inv: f64,
    /// `1/p = Σ 1/p_j`.
    pub p_total_inv: f64,
    /// `1/r = Σ 1/r_j`.
    pub r_total_inv: f64,
    pub q_inv: f64,
    pub t_inv: Vec<f64>,
    /// `1/t = Σ 1/t_j = 1/r - 1/p`.
    pub t_total_inv: f64,
    pub sigma_inv: Vec<f64>,
    pub p_hat_inv: Vec<f64>,
    pub p_hat_total_inv: f64,
    pub kappa_inv: f64,
    pub rho_inv: f64,
    pub lambda: Vec<f64>,
    /// `1/κ_j = 1/p_j - 1/σ_j`, the outer exponent of the single-weight factor.
    pub kappa_j_inv: Vec<f64>,
}

impl ExponentConfig {
    /// Exponents may be `f64::INFINITY`.
    pub fn new(p: &[f64], r: &[f64], s: f64) -> Result<Self> {
        for (name, v) in [("p", p), ("r", r)] {
            if let Some(x) = v.iter().find(|x| x.is_nan() || **x <= 0.0) {
                return Err(Error::Exponent(format!("{name}_j must be positive, got {x}")));
            }
        }
        if s == 0.0 || s.is_nan() {
            return Err(Error::Exponent("s must be nonzero".into()));
        }
        let p_inv: Vec<f64> = p.iter().map(|&x| recip(x)).collect();
        let r_inv: Vec<f64> = r.iter().map(|&x| recip(x)).collect();
        Self::from_reciprocals(&p_inv, &r_inv, recip(s))
    }

    pub fn from_reciprocals(p_inv: &[f64], r_inv: &[f64], s_inv: f64) -> Result<Self> {
        let m = p_inv.len();
        if m == 0 {
            return Err(Error::Empty("exponent vector"));
        }
        if r_inv.len() != m {
            return Err(Error::Dimension { expected: m, got: r_inv.len() });
        }
        if !s_inv.is_finite() {
            return Err(Error::Exponent("s must be nonzero".into()));
        }
        for j in 0..m {
            if !(p_inv[j] >= 0.0) || !p_inv[j].is_finite() {
                return Err(Error::Exponent(format!("p_{} must lie in (0, ∞]", j + 1)));
            }
            if !(r_inv[j] > 0.0) || !r_inv[j].is_finite() {
                return Err(Error::Exponent(format!("r_{} must lie in (0, ∞)", j + 1)));
            }
            if p_inv[j] > r_inv[j] {
                return Err(Error::Exponent(format!(
                    "constraint p_{k} >= r_{k} violated (p_{k} = {}, r_{k} = {})",
                    recip(p_inv[j]),
                    recip(r_inv[j]),
                    k = j + 1
                )));
            }
        }
        let p_total_inv: f64 = p_inv.iter().sum();
        let r_total_inv: f64 = r_inv.iter().sum();
        if p_total_inv < s_inv {
            return Err(Error::Exponent(format!(
                "constraint 1/p >= 1/s violated (1/p = {p_total_inv}, 1/s = {s_inv})"
            )));
        }
        let rho_inv = r_total_inv - s_inv;
        if !(rho_inv > 0.0) {
            return Err(Error::Exponent(format!("constraint 1/r > 1/s violated (r = s = {})", recip(s_inv))));
        }
        let q_inv = p_total_inv - s_inv;
        let t_inv: Vec<f64> = (0..m).map(|j| r_inv[j] - p_inv[j]).collect();
        let sigma_inv: Vec<f64> = (0..m).map(|j| r_inv[j] - rho_inv).collect();
        let p_hat_inv: Vec<f64> = (0..m).map(|j| r_inv[j] + sigma_inv[j] - p_inv[j]).collect();
        let lambda: Vec<f64> = t_inv.iter().map(|&ti| if ti == 0.0 { f64::INFINITY } else { rho_inv / ti }).collect();
        let kappa_j_inv: Vec<f64> = (0..m).map(|j| p_inv[j] - sigma_inv[j]).collect();
        Ok(ExponentConfig {
            p_inv: p_inv.to_vec(),
            r_inv: r_inv.to_vec(),
            s_inv,
            p_total_inv,
            r_total_inv,
            q_inv,
            t_total_inv: t_inv.iter().sum(),
            t_inv,
            sigma_inv,
            p_hat_inv,
            p_hat_total_inv: r_total_inv + s_inv - p_total_inv,
            kappa_inv: q_inv / rho_inv,
            rho_inv,
            lambda,
            kappa_j_inv,
        })
    }

    /// `p_j ∈ [1,∞]`, `r_j = 1`, `s = ∞`: then `q = p` and `t_j = p_j'`.
    pub fn classical(p: &[f64]) -> Result<Self> {
        Self::new(p, &vec![1.0; p.len()], f64::INFINITY)
    }

    pub fn m(&self) -> usize {
        self.p_inv.len()
    }

    pub fn p(&self) -> f64 {
        recip(self.p_total_inv)
    }
    pub fn q(&self) -> f64 {
        recip(self.q_inv)
    }
    pub fn t(&self, j: usize) -> f64 {
        recip(self.t_inv[j])
    }
    pub fn sigma(&self, j: usize) -> f64 {
        recip(self.sigma_inv[j])
    }
    pub fn p_hat(&self, j: usize) -> f64 {
        recip(self.p_hat_inv[j])
    }
    pub fn p_hat_total(&self) -> f64 {
        recip(self.p_hat_total_inv)
    }
    pub fn kappa(&self) -> f64 {
        recip(self.kappa_inv)
    }
    pub fn rho(&self) -> f64 {
        recip(self.rho_inv)
    }

    /// Configuration of the single-weight factor `[W_j]_{p_j,(r_j,σ_j)}`.
    pub fn factor(&self, j: usize) -> Result<ExponentConfig> {
        ExponentConfig::from_reciprocals(&[self.p_inv[j]], &[self.r_inv[j]], self.sigma_inv[j])
    }

    pub fn is_classical(&self) -> bool {
        self.r_inv.iter().all(|&x| x == 1.0) && self.s_inv == 0.0
    }
}

/// `(avg x^{1/a})^{a}` for reciprocal exponent `a`; `a = 0` is the maximum and
/// negative `a` requires strictly positive data.
pub fn power_mean(values: &[f64], a: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    if a == 0.0 {
        return values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let t = 1.0 / a;
    let s: f64 = values.iter().map(|x| x.powf(t)).sum();
    (s / values.len() as f64).powf(a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeValue {
    pub cube: Cube,
    pub value: f64,
    /// Two-sided interval for the ratio of the double-average value to this value.
    pub slack: Option<(f64, f64)>,
}

/// A supremum over a finite cube family with the per-cube values that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Characteristic {
    pub value: f64,
    pub argmax: Cube,
    pub per_cube: Vec<CubeValue>,
}

impl Characteristic {
    fn from_values(per_cube: Vec<CubeValue>) -> Result<Self> {
        let best = per_cube
            .iter()
            .max_by(|a, b| a.value.total_cmp(&b.value))
            .ok_or(Error::Empty("cube family"))?;
        Ok(Characteristic { value: best.value, argmax: best.cube.clone(), per_cube: per_cube.clone() })
    }

    pub fn at(&self, q: &Cube) -> Option<f64> {
        self.per_cube.iter().find(|c| &c.cube == q).map(|c| c.value)
    }

    /// Extreme slack bounds over the family.
    pub fn slack_range(&self) -> Option<(f64, f64)> {
        let lo = self.per_cube.iter().filter_map(|c| c.slack.map(|s| s.0)).fold(f64::INFINITY, f64::min);
        let hi = self.per_cube.iter().filter_map(|c| c.slack.map(|s| s.1)).fold(0.0, f64::max);
        (lo.is_finite()).then_some((lo, hi))
    }
}

/// All dyadic subcubes of the grid domain, down to cell level.
pub fn default_family(grid: &CellGrid) -> Vec<Cube> {
    grid.dyadic_family()
}

fn common_grid(ws: &[&MatrixWeightField]) -> Result<CellGrid> {
    let first = ws.first().ok_or(Error::Empty("weight list"))?;
    for w in &ws[1..] {
        first.grid().same_as(w.grid())?;
    }
    Ok(first.grid().clone())
}

/// Double average of one cube: `power_mean_x(Π_j power_mean_y(‖W_j(x)W_j(y)^{-1}‖, a_j), outer)`.
fn double_average(ws: &[&MatrixWeightField], outer: f64, inner: &[f64], cells: &[usize]) -> f64 {
    let mut row = vec![0.0; cells.len()];
    let per_x: Vec<f64> = cells
        .iter()
        .map(|&x| {
            let mut prod = 1.0;
            for (w, &a) in ws.iter().zip(inner) {
                let wx = w.at(x);
                for (slot, &y) in row.iter_mut().zip(cells) {
                    *slot = op_norm(&(wx * w.inv_at(y)));
                }
                prod *= power_mean(&row, a);
            }
            prod
        })
        .collect();
    power_mean(&per_x, outer)
}

/// Double-average characteristic with explicit reciprocal exponents:
/// `sup_Q (avg_x Π_j (avg_y ‖W_j(x)W_j(y)^{-1}‖^{t_j})^{q/t_j})^{1/q}`.
pub fn roudenko_with(ws: &[&MatrixWeightField], q_inv: f64, t_inv: &[f64], cubes: &[Cube]) -> Result<Characteristic> {
    if t_inv.len() != ws.len() {
        return Err(Error::Dimension { expected: ws.len(), got: t_inv.len() });
    }
    let grid = common_grid(ws)?;
    if cubes.is_empty() {
        return Err(Error::Empty("cube family"));
    }
    let cells: Vec<Vec<usize>> = cubes.iter().map(|q| grid.cells_of(q)).collect::<Result<_>>()?;
    let values = par::map_slice(&cells, |c| double_average(ws, q_inv, t_inv, c));
    Characteristic::from_values(
        cubes.iter().zip(values).map(|(q, value)| CubeValue { cube: q.clone(), value, slack: None }).collect(),
    )
}

/// `[W⃗]_{p⃗,(r⃗,s),op}` over the given cubes.
pub fn roudenko_characteristic(ws: &[&MatrixWeightField], cfg: &ExponentConfig, cubes: &[Cube]) -> Result<Characteristic> {
    if ws.len() != cfg.m() {
        return Err(Error::Dimension { expected: cfg.m(), got: ws.len() });
    }
    roudenko_with(ws, cfg.q_inv, &cfg.t_inv, cubes)
}

/// `[𝐖]_{p,(r,s),op}` for the tensor weight, which never exceeds `[W⃗]_{p⃗,(r⃗,s),op}`.
pub fn tensor_characteristic(ws: &[&MatrixWeightField], cfg: &ExponentConfig, cubes: &[Cube]) -> Result<Characteristic> {
    let big = tensor_weight(ws)?;
    roudenko_with(&[&big], cfg.q_inv, &[cfg.t_total_inv], cubes)
}

/// The three factors bounding `[W⃗]_{p⃗,(r⃗,s),op}` from above.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Factorization {
    pub multilinear: Characteristic,
    /// `[𝐖^{-1}]_{p̂,(r,s),op}`.
    pub tensor_inverse: Characteristic,
    /// `[W_j]_{p_j,(r_j,σ_j),op}`.
    pub factors: Vec<Characteristic>,
}

impl Factorization {
    pub fn product(&self) -> f64 {
        self.tensor_inverse.value * self.factors.iter().map(|c| c.value).product::<f64>()
    }

    /// `lhs / product` on every cube, each at most one.
    pub fn per_cube_ratios(&self) -> Vec<f64> {
        self.multilinear
            .per_cube
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let rhs = self.tensor_inverse.per_cube[i].value
                    * self.factors.iter().map(|f| f.per_cube[i].value).product::<f64>();
                c.value / rhs
            })
            .collect()
    }
}

pub fn factorization(ws: &[&MatrixWeightField], cfg: &ExponentConfig, cubes: &[Cube]) -> Result<Factorization> {
    let multilinear = roudenko_characteristic(ws, cfg, cubes)?;
    let inv = tensor_weight(ws)?.inverse();
    // p̂ gives outer exponent 1/r - 1/p = 1/t and inner exponent 1/p - 1/s = 1/q.
    let tensor_inverse = roudenko_with(&[&inv], cfg.t_total_inv, &[cfg.q_inv], cubes)?;
    let factors = (0..cfg.m())
        .map(|j| roudenko_with(&[ws[j]], cfg.kappa_j_inv[j], &[cfg.t_inv[j]], cubes))
        .collect::<Result<Vec<_>>>()?;
    Ok(Factorization { multilinear, tensor_inverse, factors })
}

/// Relative widening of the sandwich: the measured ratios come from a direction net
/// and can sit slightly inside the true extremes.
const NET_MARGIN: f64 = 1e-3;

/// Slack of one reducing operator: lower and upper sandwich constants.
fn sandwich(lower_ratio: f64, lower_bound: f64, upper_ratio: f64, upper_bound: f64) -> (f64, f64) {
    (lower_ratio.min(lower_bound) / (1.0 + NET_MARGIN), upper_ratio.max(upper_bound) * (1.0 + NET_MARGIN))
}

/// `‖Σ_k ·‖` for a `t`-quasinorm over `n` summands: `n · n^{(1/t - 1)_+}`.
fn column_factor(n: usize, t_inv: f64) -> f64 {
    let n = n as f64;
    n * n.powf((t_inv - 1.0).max(0.0))
}

/// `sup_Q ‖A_{𝐖,Q,q} (⊗_j A_{W_j^{-1},Q,t_j})‖` with the per-cube interval containing
/// the ratio of the double-average value to it.
pub fn reducing_characteristic(ws: &[&MatrixWeightField], cfg: &ExponentConfig, cubes: &[Cube]) -> Result<Characteristic> {
    reducing_characteristic_with(ws, cfg, cubes, Reducer::global())
}

pub fn reducing_characteristic_with(
    ws: &[&MatrixWeightField],
    cfg: &ExponentConfig,
    cubes: &[Cube],
    reducer: &Reducer,
) -> Result<Characteristic> {
    if ws.len() != cfg.m() {
        return Err(Error::Dimension { expected: cfg.m(), got: ws.len() });
    }
    if cubes.is_empty() {
        return Err(Error::Empty("cube family"));
    }
    let big = tensor_weight(ws)?;
    let invs: Vec<MatrixWeightField> = ws.iter().map(|w| w.inverse()).collect();
    let n_big = big.n();
    let q = recip(cfg.q_inv);
    let per = par::map_slice(cubes, |cube| -> Result<CubeValue> {
        let outer = reducer.reduce(&big, cube, q)?;
        let mut lo = 1.0;
        let mut hi = 1.0;
        let mut parts: Vec<DMatrix<f64>> = Vec::with_capacity(ws.len());
        for (j, inv) in invs.iter().enumerate() {
            let r = reducer.reduce(inv, cube, recip(cfg.t_inv[j]))?;
            let (l, u) = sandwich(r.lower_ratio, r.lower_bound, r.upper_ratio, r.upper_bound);
            lo /= u;
            hi *= column_factor(inv.n(), cfg.t_inv[j]) / l;
            parts.push(r.a.clone());
        }
        let (l, u) = sandwich(outer.lower_ratio, outer.lower_bound, outer.upper_ratio, outer.upper_bound);
        lo /= u;
        hi *= column_factor(n_big, cfg.q_inv) / l;
        let refs: Vec<&DMatrix<f64>> = parts.iter().collect();
        let value = op_norm(&(&outer.a * tensor_matrix(&refs)?));
        Ok(CubeValue { cube: cube.clone(), value, slack: Some((lo, hi)) })
    });
    Characteristic::from_values(per.into_iter().collect::<Result<Vec<_>>>()?)
}

/// `‖T_Q f⃗‖_{L^p_𝐖} / Π_j ‖f_j‖_{L^{p_j}_{W_j}}` with all norms taken as averages over `cells`.
pub fn averaging_ratio(ws: &[&MatrixWeightField], p_inv: &[f64], cells: &[usize], fs: &[&VectorField]) -> f64 {
    let p_total: f64 = p_inv.iter().sum();
    let avgs: Vec<Vec<f64>> = fs.iter().map(|f| f.average(cells)).collect();
    let out: Vec<f64> = cells
        .iter()
        .map(|&x| ws.iter().zip(&avgs).map(|(w, a)| apply_norm(w.at(x), a)).product())
        .collect();
    let num = power_mean(&out, p_total);
    let mut den = 1.0;
    for ((w, f), &a) in ws.iter().zip(fs).zip(p_inv) {
        let vals: Vec<f64> = cells.iter().map(|&y| apply_norm(w.at(y), f.get(y))).collect();
        den *= power_mean(&vals, a);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// The input that is extremal in Hölder's inequality for the functional `⟨·, e⟩`:
/// `f(y) = ‖W(y)^{-1}e‖^{p'-2} W(y)^{-2} e`, concentrated at the maximizing cell when `p = 1`.
pub fn dual_extremal(w: &MatrixWeightField, p_inv: f64, cells: &[usize], e: &[f64]) -> VectorField {
    let n = w.n();
    let mut f = VectorField::zeros(w.grid().clone(), n);
    let pp_inv = 1.0 - p_inv;
    let ev = nalgebra::DVector::from_column_slice(e);
    if pp_inv == 0.0 {
        let best = cells
            .iter()
            .copied()
            .max_by(|&a, &b| apply_norm(w.inv_at(a), e).total_cmp(&apply_norm(w.inv_at(b), e)))
            .unwrap();
        let v = w.inv_at(best) * (w.inv_at(best) * &ev);
        f.get_mut(best).copy_from_slice(v.as_slice());
        return f;
    }
    let pp = 1.0 / pp_inv;
    for &y in cells {
        let wi = w.inv_at(y) * &ev;
        let scale = wi.norm().powf(pp - 2.0);
        let v = w.inv_at(y) * wi * scale;
        f.get_mut(y).copy_from_slice(v.as_slice());
    }
    f
}

#[derive(Clone, Debug)]
pub struct OracleOptions {
    pub starts: usize,
    pub seed: u64,
    /// Objective evaluations per start.
    pub max_evals: usize,
    /// Extra inputs evaluated exactly and included in the supremum.
    pub probes: Vec<Vec<VectorField>>,
    /// Use the closed form when `m = 1`, `p = 2`.
    pub closed_form: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { starts: 16, seed: 0x6f72_6163, max_evals: 4000, probes: Vec::new(), closed_form: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleResult {
    /// Certified lower bound on `‖T_Q‖`.
    pub value: f64,
    pub closed_form: bool,
    pub converged: bool,
    /// Dual directions `e⃗` of the best parametrized input, if it won.
    pub directions: Option<Vec<Vec<f64>>>,
    pub evaluations: usize,
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s > 1e-3 && s <= 1.0 {
            return v.iter().map(|x| x / s).collect();
        }
    }
}

/// `‖(avg_Q W²)^{1/2} (avg_Q W^{-2})^{1/2}‖`, the exact norm of `T_Q` on `L²_W`.
pub fn p2_closed_form(w: &MatrixWeightField, cells: &[usize]) -> f64 {
    let (a, b) = p2_factors(w, cells);
    op_norm(&(a * b))
}

fn p2_factors(w: &MatrixWeightField, cells: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = w.n();
    let mut s = DMatrix::<f64>::zeros(n, n);
    let mut si = DMatrix::<f64>::zeros(n, n);
    for &c in cells {
        s += w.at(c) * w.at(c);
        si += w.inv_at(c) * w.inv_at(c);
    }
    let k = cells.len() as f64;
    (sym_pow(&(s / k), 0.5), sym_pow(&(si / k), 0.5))
}

/// Lower bound on `‖T_Q‖_{L^{p⃗}_{W⃗} → L^p_𝐖}` by multistart ascent over dual directions.
pub fn averaging_norm_oracle(ws: &[&MatrixWeightField], p: &[f64], q: &Cube, opts: &OracleOptions) -> Result<OracleResult> {
    let m = ws.len();
    if p.len() != m {
        return Err(Error::Dimension { expected: m, got: p.len() });
    }
    if let Some(x) = p.iter().find(|x| !(**x >= 1.0)) {
        return Err(Error::Exponent(format!("oracle requires p_j in [1, ∞], got {x}")));
    }
    let grid = common_grid(ws)?;
    let cells = grid.cells_of(q)?;
    let p_inv: Vec<f64> = p.iter().map(|&x| recip(x)).collect();
    let mut best = OracleResult { value: 0.0, closed_form: false, converged: true, directions: None, evaluations: 0 };
    for probe in &opts.probes {
        if probe.len() != m {
            return Err(Error::Dimension { expected: m, got: probe.len() });
        }
        let refs: Vec<&VectorField> = probe.iter().collect();
        let v = averaging_ratio(ws, &p_inv, &cells, &refs);
        best.evaluations += 1;
        if v > best.value {
            best.value = v;
        }
    }
    if opts.closed_form && m == 1 && p[0] == 2.0 {
        best.value = best.value.max(p2_closed_form(ws[0], &cells));
        best.closed_form = true;
        return Ok(best);
    }
    let dims: Vec<usize> = ws.iter().map(|w| w.n()).collect();
    let eval = |es: &[Vec<f64>]| -> f64 {
        let fs: Vec<VectorField> = (0..m).map(|j| dual_extremal(ws[j], p_inv[j], &cells, &es[j])).collect();
        let refs: Vec<&VectorField> = fs.iter().collect();
        averaging_ratio(ws, &p_inv, &cells, &refs)
    };
    let runs = par::map_range(opts.starts, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
        let mut es: Vec<Vec<f64>> = dims.iter().map(|&n| random_unit(&mut rng, n)).collect();
        let mut val = eval(&es);
        let mut evals = 1;
        let mut step = 0.5;
        while step > 1e-7 && evals < opts.max_evals {
            let trial: Vec<Vec<f64>> = es
                .iter()
                .map(|e| {
                    let v: Vec<f64> = e.iter().map(|x| x + step * (2.0 * rng.random::<f64>() - 1.0)).collect();
                    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if s < 1e-12 {
                        e.clone()
                    } else {
                        v.iter().map(|x| x / s).collect()
                    }
                })
                .collect();
            let tv = eval(&trial);
            evals += 1;
            if tv > val {
                val = tv;
                es = trial;
            } else {
                step *= 0.93;
            }
        }
        (val, es, evals, step <= 1e-7)
    });
    for (val, es, evals, conv) in runs {
        best.evaluations += evals;
        best.converged &= conv;
        if val > best.value {
            best.value = val;
            best.directions = Some(es);
        }
    }
    Ok(best)
}

/// Sup over `cubes` of the oracle.
pub fn oracle_characteristic(ws: &[&MatrixWeightField], p: &[f64], cubes: &[Cube], opts: &OracleOptions) -> Result<Characteristic> {
    let vals = cubes
        .iter()
        .map(|q| averaging_norm_oracle(ws, p, q, opts).map(|r| CubeValue { cube: q.clone(), value: r.value, slack: None }))
        .collect::<Result<Vec<_>>>()?;
    Characteristic::from_values(vals)
}

/// Scalar weights `x ↦ ‖W_j(x) u_j‖`.
pub fn scalar_embedding(ws: &[&MatrixWeightField], us: &[Vec<f64>]) -> Result<Vec<ScalarField>> {
    if us.len() != ws.len() {
        return Err(Error::Dimension { expected: ws.len(), got: us.len() });
    }
    ws.iter()
        .zip(us)
        .map(|(w, u)| {
            if u.len() != w.n() {
                return Err(Error::Dimension { expected: w.n(), got: u.len() });
            }
            ScalarField::new(w.grid().clone(), w.apply_norms(u))
        })
        .collect()
}

/// `⟨Π_j w_j^p⟩^{1/p} Π_j ⟨w_j^{-p_j'}⟩^{1/p_j'}`, the exact norm of `T_Q` for scalar weights.
pub fn scalar_characteristic_on(ws: &[&ScalarField], p: &[f64], cells: &[usize]) -> f64 {
    let p_inv: Vec<f64> = p.iter().map(|&x| recip(x)).collect();
    let prod: Vec<f64> = cells.iter().map(|&c| ws.iter().map(|w| w.values[c]).product()).collect();
    let mut v = power_mean(&prod, p_inv.iter().sum());
    for (w, &a) in ws.iter().zip(&p_inv) {
        let inv: Vec<f64> = cells.iter().map(|&c| 1.0 / w.values[c]).collect();
        v *= power_mean(&inv, 1.0 - a);
    }
    v
}

pub fn scalar_characteristic(ws: &[&ScalarField], p: &[f64], cubes: &[Cube]) -> Result<Characteristic> {
    let grid = ws.first().ok_or(Error::Empty("weight list"))?.grid.clone();
    for w in ws {
        grid.same_as(&w.grid)?;
        if w.values.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Invalid("scalar weight must be positive".into()));
        }
    }
    let vals = cubes
        .iter()
        .map(|q| {
            grid.cells_of(q).map(|c| CubeValue { cube: q.clone(), value: scalar_characteristic_on(ws, p, &c), slack: None })
        })
        .collect::<Result<Vec<_>>>()?;
    Characteristic::from_values(vals)
}

/// Inputs `f_j = h_j u_j` with `h_j` the scalar extremal for `w_j = ‖W_j u_j‖` on `cells`.
/// Their averaging ratio under `W⃗` equals the scalar characteristic of `(w_j)` on the cube.
pub fn embedding_probe(ws: &[&MatrixWeightField], us: &[Vec<f64>], p: &[f64], cells: &[usize]) -> Result<Vec<VectorField>> {
    let sw = scalar_embedding(ws, us)?;
    Ok(sw
        .iter()
        .zip(us)
        .zip(p)
        .map(|((w, u), &pj)| {
            let pp_inv = 1.0 - recip(pj);
            let mut h = ScalarField::constant(w.grid.clone(), 0.0);
            if pp_inv == 0.0 {
                let c = cells.iter().copied().min_by(|&a, &b| w.values[a].total_cmp(&w.values[b])).unwrap();
                h.values[c] = 1.0;
            } else {
                let pp = 1.0 / pp_inv;
                for &c in cells {
                    h.values[c] = w.values[c].powf(-pp);
                }
            }
            VectorField::scaled(&h, u)
        })
        .collect())
}

/// Bilinear duality diagnostic for `p = 2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BilinearDuality {
    /// `‖T_Q‖` on `L²_W`, exact.
    pub linear: f64,
    /// Certified lower bound on the bilinear norm into `L¹_{W⊗W^{-1}}`.
    pub bilinear: f64,
    /// `‖T_Q‖²`.
    pub upper: f64,
}

/// Bilinear norm of `T_Q: L²_W × L²_{W^{-1}} → L¹_{W⊗W^{-1}}`, bounded below by a search over
/// normalized averages `(Mα, Nβ)` with `M = (avg W^{-2})^{1/2}`, `N = (avg W²)^{1/2}`.
pub fn bilinear_duality(w: &MatrixWeightField, q: &Cube, seed: u64) -> Result<BilinearDuality> {
    let cells = w.grid().cells_of(q)?;
    let (nmat, mmat) = p2_factors(w, &cells);
    let nm = &nmat * &mmat;
    let linear = op_norm(&nm);
    let objective = |alpha: &[f64], beta: &[f64]| -> f64 {
        let a = &mmat * nalgebra::DVector::from_column_slice(alpha);
        let b = &nmat * nalgebra::DVector::from_column_slice(beta);
        let s: f64 = cells.iter().map(|&x| (w.at(x) * &a).norm() * (w.inv_at(x) * &b).norm()).sum();
        s / cells.len() as f64
    };
    // The top singular pair of NM already certifies the linear norm.
    let svd = nm.clone().svd(true, true);
    let k = svd.singular_values.imax();
    let alpha: Vec<f64> = svd.v_t.as_ref().unwrap().row(k).iter().copied().collect();
    let beta: Vec<f64> = svd.u.as_ref().unwrap().column(k).iter().copied().collect();
    let mut best = objective(&alpha, &beta);
    let n = w.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for start in 0..8 {
        let (mut a, mut b) = if start == 0 { (alpha.clone(), beta.clone()) } else { (random_unit(&mut rng, n), random_unit(&mut rng, n)) };
        let mut val = objective(&a, &b);
        let mut step = 0.5;
        while step > 1e-7 {
            let perturb = |v: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
                let t: Vec<f64> = v.iter().map(|x| x + step * (2.0 * rng.random::<f64>() - 1.0)).collect();
                let s = t.iter().map(|x| x * x).sum::<f64>().sqrt();
                t.iter().map(|x| x / s).collect()
            };
            let ta = perturb(&a, &mut rng);
            let tb = perturb(&b, &mut rng);
            let tv = objective(&ta, &tb);
            if tv > val {
                val = tv;
                a = ta;
                b = tb;
            } else {
                step *= 0.9;
            }
        }
        best = best.max(val);
    }
    Ok(BilinearDuality { linear, bilinear: best, upper: linear * linear })
}

/// `(1/w(Q₀)) ∫_{Q₀} M^{𝒟(Q₀)}(w 1_{Q₀})`, with the local dyadic maximal function
/// computed by a top-down sweep of running maxima of ancestor averages.
pub fn fujii_wilson(w: &ScalarField, q0: &Cube) -> Result<f64> {
    let grid = &w.grid;
    let block = grid.block(q0)?;
    let depth = block.len.trailing_zeros();
    if !block.len.is_power_of_two() {
        return Err(Error::Misaligned("cube side must be a power-of-two multiple of the cell side".into()));
    }
    let cells = grid.block_cells(&block);
    let total: f64 = cells.iter().map(|&c| w.values[c]).sum();
    if !(total > 0.0) {
        return Err(Error::Invalid("weight has zero mass on the cube".into()));
    }
    let mut maxf = vec![0.0f64; grid.n_cells()];
    fn sweep(grid: &CellGrid, w: &ScalarField, q: &Cube, run: f64, left: u32, maxf: &mut [f64]) {
        let cells = grid.cells_of(q).unwrap();
        let first = w.values[cells[0]];
        // Constant pieces keep their exact value so that constant weights give exactly 1.
        let avg = if cells.iter().all(|&c| w.values[c] == first) { first } else { w.average(&cells) };
        let run = run.max(avg);
        if left == 0 {
            for c in cells {
                maxf[c] = run;
            }
            return;
        }
        for ch in q.children() {
            sweep(grid, w, &ch, run, left - 1, maxf);
        }
    }
    sweep(grid, w, q0, 0.0, depth, &mut maxf);
    let m: f64 = cells.iter().map(|&c| maxf[c]).sum();
    Ok(m / total)
}

/// Fujii–Wilson constant `[w]_FW = sup_{Q₀} fujii_wilson(w, Q₀)` over a family.
pub fn fujii_wilson_characteristic(w: &ScalarField, cubes: &[Cube]) -> Result<Characteristic> {
    let vals: Vec<Result<f64>> = par::map_slice(cubes, |q| fujii_wilson(w, q));
    let per = cubes
        .iter()
        .zip(vals)
        .map(|(q, v)| v.map(|value| CubeValue { cube: q.clone(), value, slack: None }))
        .collect::<Result<Vec<_>>>()?;
    Characteristic::from_values(per)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn half_weight(l: u32) -> MatrixWeightField {
        let g = CellGrid::unit(1, l);
        let n = g.n_cells();
        let v: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { 4.0 }).collect();
        MatrixWeightField::from_scalar(g, &v).unwrap()
    }

    #[test]
    fn derived_example() {
        let c = ExponentConfig::new(&[2.0, 2.0], &[1.0, 1.0], f64::INFINITY).unwrap();
        assert_eq!(c.p(), 1.0);
        assert_eq!(c.q(), 1.0);
        assert_eq!(c.t(0), 2.0);
        assert_eq!(c.sigma(1), -1.0);
        assert_eq!(c.p_hat(0), -2.0);
        assert_eq!(c.kappa(), 2.0);
        assert_eq!(c.rho(), 0.5);
        assert_eq!(c.lambda, vec![4.0, 4.0]);
    }

    #[test]
    fn constraints_are_named() {
        let e = ExponentConfig::new(&[1.0], &[2.0], f64::INFINITY).unwrap_err();
        assert!(e.to_string().contains("p_1 >= r_1"));
        let e = ExponentConfig::new(&[2.0], &[1.0], 1.0).unwrap_err();
        assert!(e.to_string().contains("1/p >= 1/s"));
    }

    #[test]
    fn seventeen_eighths() {
        let w = half_weight(3);
        let cfg = ExponentConfig::classical(&[2.0]).unwrap();
        let q = Cube::unit(1);
        let r = roudenko_characteristic(&[&w], &cfg, &[q.clone()]).unwrap();
        assert_relative_eq!(r.value, 17.0 / 8.0, epsilon = 1e-12);
        let o = averaging_norm_oracle(&[&w], &[2.0], &q, &OracleOptions::default()).unwrap();
        assert_relative_eq!(o.value, 17.0 / 8.0, epsilon = 1e-12);
        let red = reducing_characteristic(&[&w], &cfg, &[q]).unwrap();
        assert_relative_eq!(red.value, 17.0 / 8.0, epsilon = 1e-6);
    }

    #[test]
    fn oracle_search_matches_closed_form() {
        let w = half_weight(2);
        let q = Cube::unit(1);
        let opts = OracleOptions { closed_form: false, ..OracleOptions::default() };
        let o = averaging_norm_oracle(&[&w], &[2.0], &q, &opts).unwrap();
        assert_relative_eq!(o.value, 17.0 / 8.0, epsilon = 1e-9);
    }

    #[test]
    fn fujii_wilson_one_three() {
        let g = CellGrid::unit(1, 1);
        let w = ScalarField::new(g, vec![1.0, 3.0]).unwrap();
        assert_relative_eq!(fujii_wilson(&w, &Cube::unit(1)).unwrap(), 1.25, epsilon = 1e-15);
    }

    #[test]
    fn power_mean_conventions() {
        assert_eq!(power_mean(&[1.0, 3.0], 0.0), 3.0);
        assert_relative_eq!(power_mean(&[1.0, 4.0], -1.0), 1.6, epsilon = 1e-15);
        assert_relative_eq!(power_mean(&[1.0, 3.0], 1.0), 2.0, epsilon = 1e-15);
    }
}
