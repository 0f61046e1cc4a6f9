//! The acceptance criteria as runnable checks.

use std::time::Instant;

use mw_harmonics::convex::{aumann_average, body_norm, Body, BodyField};
use mw_harmonics::czo::{cotlar_fit, cz_decompose, endpoint_fit, nondegeneracy_check, riesz_kernel, sparse_dominate};
use mw_harmonics::geometry::Cube;
use mw_harmonics::grid::{CellGrid, ScalarField, VectorField};
use mw_harmonics::linalg::{apply_norm, op_norm};
use mw_harmonics::maximal::{convex_body_maximal, maximal_sparse_dominate, weak_norm_maximal, Input};
use mw_harmonics::muckenhoupt::{
    averaging_norm_oracle, embedding_probe, factorization, fujii_wilson, reducing_characteristic_with,
    roudenko_characteristic, scalar_characteristic_on, scalar_embedding, tensor_characteristic, ExponentConfig,
    OracleOptions,
};
use mw_harmonics::nets::full_sphere_net;
use mw_harmonics::tensor::{tensor_matrix, tensor_vector};
use mw_harmonics::weights::{
    local_quasinorm, make_weight, quasi_triangle_constant, random_spd, tensor_weight, MatrixWeightField, Reducer,
    ReducerOptions, WeightSpec,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    /// Grid levels up to 5, reduced instance counts.
    Fast,
    /// Grid levels up to 7.
    Full,
}

impl Tier {
    pub fn max_level(self) -> u32 {
        match self {
            Tier::Fast => 5,
            Tier::Full => 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub tier: Tier,
    /// John-ellipsoid tolerance used by every reducing operator in the suite.
    pub john_tau: f64,
    pub seed: u64,
}

impl SuiteOptions {
    pub fn new(tier: Tier) -> Self {
        SuiteOptions { tier, john_tau: ReducerOptions::default().tau, seed: 0x5eed }
    }

    fn rng(&self, id: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(id as u64))
    }

    fn reducer(&self) -> Reducer {
        Reducer::new(ReducerOptions { tau: self.john_tau, ..ReducerOptions::default() })
    }

    fn count(&self, fast: usize, full: usize) -> usize {
        match self.tier {
            Tier::Fast => fast,
            Tier::Full => full,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked statistic.
    pub measured: f64,
    /// Bound the statistic is compared against.
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<28} {} measured={:.6e} threshold={:.6e} time={:.2}s {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.measured,
            self.threshold,
            self.seconds,
            self.detail
        )
    }
}

/// Pass when `measured <= threshold`.
struct Outcome {
    measured: f64,
    threshold: f64,
    ok: bool,
    detail: String,
}

impl Outcome {
    fn at_most(measured: f64, threshold: f64, detail: String) -> Self {
        Outcome { measured, threshold, ok: measured <= threshold, detail }
    }
}

type Check = fn(&SuiteOptions) -> anyhow::Result<Outcome>;

pub const CRITERIA: [(usize, &str); 15] = [
    (1, "reducing-sandwich"),
    (2, "tensor-norm"),
    (3, "oracle-below-roudenko"),
    (4, "closed-form-17/8"),
    (5, "factorization"),
    (6, "tensor-monotonicity"),
    (7, "scalar-embedding"),
    (8, "aumann-two-sided"),
    (9, "convex-maximal-sparse"),
    (10, "cz-sparse-domination"),
    (11, "riesz-nondegeneracy"),
    (12, "cz-decomposition"),
    (13, "fujii-wilson"),
    (14, "weak-type-direction"),
    (15, "diagnostics-stability"),
];

fn check_fn(id: usize) -> Check {
    match id {
        1 => c01_sandwich,
        2 => c02_tensor_norm,
        3 => c03_oracle_roudenko,
        4 => c04_closed_form,
        5 => c05_factorization,
        6 => c06_tensor_monotonicity,
        7 => c07_scalar_embedding,
        8 => c08_aumann,
        9 => c09_maximal_sparse,
        10 => c10_cz_sparse,
        11 => c11_nondegeneracy,
        12 => c12_cz_decomposition,
        13 => c13_fujii_wilson,
        14 => c14_weak_type,
        _ => c15_diagnostics,
    }
}

pub fn run_criterion(id: usize, opts: &SuiteOptions) -> CriterionReport {
    let name = CRITERIA.iter().find(|c| c.0 == id).map_or("unknown", |c| c.1).to_string();
    let start = Instant::now();
    let out = if (1..=15).contains(&id) {
        check_fn(id)(opts)
    } else {
        Err(anyhow::anyhow!("no criterion {id}"))
    };
    let seconds = start.elapsed().as_secs_f64();
    match out {
        Ok(mut o) => {
            if id == 1 && opts.tier == Tier::Fast && seconds >= 60.0 {
                o.ok = false;
                o.detail.push_str(" runtime over 60 s");
            }
            CriterionReport { id, name, passed: o.ok, measured: o.measured, threshold: o.threshold, detail: o.detail, seconds }
        }
        Err(e) => CriterionReport {
            id,
            name,
            passed: false,
            measured: f64::NAN,
            threshold: f64::NAN,
            detail: format!("error: {e}"),
            seconds,
        },
    }
}

pub fn run_suite(opts: &SuiteOptions) -> Vec<CriterionReport> {
    CRITERIA.iter().map(|&(id, _)| run_criterion(id, opts)).collect()
}

fn random_vectors(rng: &mut ChaCha8Rng, grid: CellGrid, dim: usize) -> VectorField {
    let values = (0..grid.n_cells() * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    VectorField::new(grid, dim, values).expect("finite values")
}

fn random_weight(rng: &mut ChaCha8Rng, grid: CellGrid, n: usize, spread: f64) -> anyhow::Result<MatrixWeightField> {
    Ok(make_weight(&WeightSpec::RandomCells { n, seed: rng.random(), spread }, grid)?)
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s > 1e-3 && s <= 1.0 {
            return v.iter().map(|x| x / s).collect();
        }
    }
}

fn c01_sandwich(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let reducer = o.reducer();
    let grid = CellGrid::unit(1, 3);
    let cubes = [grid.domain(), Cube::dyadic(&[0], -1)];
    let mut worst = 0.0f64;
    let mut where_ = String::new();
    let mut checked = 0usize;
    for s in 0..50u64 {
        let n = 2 + (s % 2) as usize;
        let spec = if s % 3 == 0 {
            WeightSpec::RandomLogLipschitz { n, seed: o.seed ^ s, lipschitz: 3.0 }
        } else {
            WeightSpec::RandomCells { n, seed: o.seed ^ s, spread: 100.0 }
        };
        let w = make_weight(&spec, grid)?;
        for q in &cubes {
            let cells = grid.cells_of(q)?;
            for p in [0.5, 1.0, 2.0, f64::INFINITY] {
                let r = reducer.reduce(&w, q, p)?;
                let lower = quasi_triangle_constant(p).powi(-(n as i32)) * (1.0 - 1e-3);
                let upper = (n as f64).sqrt() * (1.0 + 1e-3);
                let (mut lo, mut hi) = (r.lower_ratio, r.upper_ratio);
                // A second, independent direction net with directly summed q(u).
                for u in full_sphere_net(n, 500, 0x7e57 ^ s) {
                    let ratio = apply_norm(&r.a, u.as_slice()) / local_quasinorm(&w, &cells, p, u.as_slice());
                    lo = lo.min(ratio);
                    hi = hi.max(ratio);
                }
                checked += r.verified_directions + 500;
                let slack = (hi / upper).max(lower / lo);
                if slack > worst {
                    worst = slack;
                    where_ = format!("seed {s} n={n} p={p}");
                }
            }
        }
    }
    Ok(Outcome::at_most(worst, 1.0, format!("{checked} directions, worst at {where_}")))
}

fn c02_tensor_norm(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let mut rng = o.rng(2);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let m = 2 + i % 2;
        let parts: Vec<DMatrix<f64>> = (0..m)
            .map(|_| {
                let n = rng.random_range(1..=3);
                DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
            })
            .collect();
        let refs: Vec<&DMatrix<f64>> = parts.iter().collect();
        let big = tensor_matrix(&refs)?;
        let lhs = big.svd(false, false).singular_values.max();
        let rhs: f64 = parts.iter().map(op_norm).product();
        worst = worst.max((lhs - rhs).abs() / rhs.max(1e-300));
    }
    Ok(Outcome::at_most(worst, 1e-10, "1000 Kronecker products, relative error".into()))
}

fn oracle_opts(o: &SuiteOptions) -> OracleOptions {
    OracleOptions { starts: o.count(6, 12), max_evals: o.count(1500, 3000), ..OracleOptions::default() }
}

fn c03_oracle_roudenko(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let mut rng = o.rng(3);
    let grid = CellGrid::unit(1, 2);
    let family = grid.dyadic_family();
    let exps: [&[f64]; 6] = [&[2.0], &[3.0], &[1.5], &[2.0, 2.0], &[3.0, 1.5], &[4.0, 4.0]];
    let opts = oracle_opts(o);
    let mut worst = f64::NEG_INFINITY;
    let count = o.count(6, 12);
    for i in 0..count {
        let p = exps[i % exps.len()];
        let ws: Vec<MatrixWeightField> =
            p.iter().map(|_| random_weight(&mut rng, grid, 1 + (i % 2), 20.0)).collect::<anyhow::Result<_>>()?;
        let refs: Vec<&MatrixWeightField> = ws.iter().collect();
        let cfg = ExponentConfig::classical(p)?;
        let rou = roudenko_characteristic(&refs, &cfg, &family)?;
        for (q, rv) in family.iter().zip(&rou.per_cube) {
            let orc = averaging_norm_oracle(&refs, p, q, &opts)?;
            worst = worst.max(orc.value - rv.value);
        }
    }
    Ok(Outcome::at_most(worst, 1e-6, format!("{count} instances x {} cubes, max(oracle - roudenko)", family.len())))
}

fn seventeen_eighths_weight() -> anyhow::Result<MatrixWeightField> {
    Ok(MatrixWeightField::from_scalar(CellGrid::unit(1, 1), &[1.0, 4.0])?)
}

fn c04_closed_form(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let w = seventeen_eighths_weight()?;
    let q = Cube::unit(1);
    let cfg = ExponentConfig::classical(&[2.0])?;
    let target = 17.0 / 8.0;
    let oracle = averaging_norm_oracle(&[&w], &[2.0], &q, &OracleOptions::default())?.value;
    let rou = roudenko_characteristic(&[&w], &cfg, &[q.clone()])?.value;
    let red = reducing_characteristic_with(&[&w], &cfg, &[q], &o.reducer())?.value;
    let err = [oracle, rou, red].iter().map(|v| (v - target).abs()).fold(0.0, f64::max);
    Ok(Outcome::at_most(err, 2e-3, format!("oracle {oracle:.9} roudenko {rou:.9} reducing {red:.9}")))
}

/// Random exponent data with `p_j ≥ r_j`, `1/p ≥ 1/s` and `1/r > 1/s`.
fn random_config(rng: &mut ChaCha8Rng, m: usize) -> anyhow::Result<ExponentConfig> {
    let r_inv: Vec<f64> = (0..m).map(|_| rng.random_range(0.25..1.0)).collect();
    let p_inv: Vec<f64> = r_inv.iter().map(|&r| if rng.random_bool(0.2) { r } else { r * rng.random::<f64>() }).collect();
    let p_tot: f64 = p_inv.iter().sum();
    let s_inv = if rng.random_bool(0.4) { 0.0 } else { rng.random::<f64>() * 0.9 * p_tot };
    Ok(ExponentConfig::from_reciprocals(&p_inv, &r_inv, s_inv)?)
}

struct WeightInstance {
    ws: Vec<MatrixWeightField>,
    cfg: ExponentConfig,
}

fn factorization_instances(o: &SuiteOptions) -> anyhow::Result<Vec<WeightInstance>> {
    let mut rng = o.rng(5);
    let grid = CellGrid::unit(1, 2);
    (0..30)
        .map(|i| {
            let m = 1 + i % 2;
            let ws = (0..m)
                .map(|j| {
                    let n = 1 + (i + j) % 2;
                    if i % 3 == 0 {
                        Ok(make_weight(&WeightSpec::RandomLogLipschitz { n, seed: rng.random(), lipschitz: 2.0 }, grid)?)
                    } else {
                        random_weight(&mut rng, grid, n, 30.0)
                    }
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            Ok(WeightInstance { ws, cfg: random_config(&mut rng, m)? })
        })
        .collect()
}

fn c05_factorization(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let family = CellGrid::unit(1, 2).dyadic_family();
    let mut worst = 0.0f64;
    for inst in factorization_instances(o)? {
        let refs: Vec<&MatrixWeightField> = inst.ws.iter().collect();
        let f = factorization(&refs, &inst.cfg, &family)?;
        worst = f.per_cube_ratios().into_iter().fold(worst, f64::max);
    }
    Ok(Outcome::at_most(worst, 1.0 + 1e-6, "30 instances, max lhs / product per cube".into()))
}

fn c06_tensor_monotonicity(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let family = CellGrid::unit(1, 2).dyadic_family();
    let mut worst = 0.0f64;
    for inst in factorization_instances(o)? {
        let refs: Vec<&MatrixWeightField> = inst.ws.iter().collect();
        let t = tensor_characteristic(&refs, &inst.cfg, &family)?;
        let r = roudenko_characteristic(&refs, &inst.cfg, &family)?;
        for (a, b) in t.per_cube.iter().zip(&r.per_cube) {
            worst = worst.max(a.value / b.value);
        }
    }
    Ok(Outcome::at_most(worst, 1.0 + 1e-6, "30 instances, max tensor / multilinear per cube".into()))
}

fn c07_scalar_embedding(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let mut rng = o.rng(7);
    let grid = CellGrid::unit(1, 2);
    let family = grid.dyadic_family();
    let exps: [&[f64]; 4] = [&[2.0, 2.0], &[3.0, 1.5], &[2.0], &[4.0, 2.0]];
    let mut worst = 0.0f64;
    let count = o.count(4, 8);
    for i in 0..count {
        let p = exps[i % exps.len()];
        let ws: Vec<MatrixWeightField> =
            p.iter().map(|_| random_weight(&mut rng, grid, 2, 20.0)).collect::<anyhow::Result<_>>()?;
        let refs: Vec<&MatrixWeightField> = ws.iter().collect();
        let us: Vec<Vec<Vec<f64>>> = (0..50).map(|_| p.iter().map(|_| random_unit(&mut rng, 2)).collect()).collect();
        for q in &family {
            let cells = grid.cells_of(q)?;
            let mut scalar_sup = 0.0f64;
            let mut probes = Vec::with_capacity(us.len());
            for u in &us {
                let sw = scalar_embedding(&refs, u)?;
                let srefs: Vec<&ScalarField> = sw.iter().collect();
                scalar_sup = scalar_sup.max(scalar_characteristic_on(&srefs, p, &cells));
                probes.push(embedding_probe(&refs, u, p, &cells)?);
            }
            let opts = OracleOptions { probes, ..oracle_opts(o) };
            let orc = averaging_norm_oracle(&refs, p, q, &opts)?;
            worst = worst.max(scalar_sup / orc.value);
        }
    }
    Ok(Outcome::at_most(worst, 1.0 + 1e-9, format!("{count} instances, 50 directions, max scalar / matrix oracle")))
}

fn c08_aumann(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let mut rng = o.rng(8);
    let grid = CellGrid::unit(1, 3);
    let family = grid.dyadic_family();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = 2 + i % 2;
        let bodies: Vec<Body> = (0..grid.n_cells())
            .map(|_| {
                let scale = rng.random_range(0.1..2.0);
                Body::ellipsoid(random_spd(&mut rng, n, 50.0) * scale)
            })
            .collect::<Result<_, _>>()?;
        let norms: Vec<f64> = bodies.iter().map(|b| body_norm(b).value).collect();
        let f = BodyField::new(grid, bodies)?;
        for q in &family {
            let cells = grid.cells_of(q)?;
            let lhs = body_norm(&aumann_average(&f, q)?).value;
            let avg = cells.iter().map(|&c| norms[c]).sum::<f64>() / cells.len() as f64;
            worst = worst.max(lhs / avg).max(avg / (n as f64 * lhs));
        }
    }
    Ok(Outcome::at_most(worst, 1.0 + 1e-9, "100 ellipsoid fields, max of both ratios".into()))
}

fn c09_maximal_sparse(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let mut rng = o.rng(9);
    let grid = CellGrid::unit(1, 5);
    let family = grid.dyadic_family();
    let mut worst = 0.0f64;
    let mut all = true;
    let count = o.count(3, 5);
    for i in 0..count {
        let m = if i == 0 { 1 } else { 2 };
        let fs: Vec<VectorField> = (0..m).map(|_| random_vectors(&mut rng, grid, 2)).collect();
        let inputs: Vec<Input> = fs.iter().map(Input::Vectors).collect();
        let r = maximal_sparse_dominate(&inputs, &family)?;
        all &= r.certified();
        worst = worst.max(r.measured / r.bound);
    }
    let detail = format!("{count} instances, L=5, 200 directions per cell, martingale sparse {all}");
    Ok(Outcome { measured: worst, threshold: 1.0, ok: all && worst <= 1.0 + 1e-9, detail })
}

fn cz_levels(o: &SuiteOptions) -> Vec<u32> {
    let top = o.tier.max_level();
    vec![top - 2, top - 1, top]
}

fn c10_cz_sparse(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let q0 = Cube::dyadic(&[1], 0);
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut detail = String::new();
    for m in [1usize, 2] {
        let k = riesz_kernel(m, 1)?;
        let mut cs = Vec::new();
        for l in cz_levels(o) {
            let grid = CellGrid::new(1, 2, l + 2)?;
            let f = VectorField::from_scalar(&ScalarField::indicator(grid, &q0)?);
            let fs: Vec<&VectorField> = vec![&f; m];
            let r = sparse_dominate(&k, &fs, &q0, 0.5)?;
            ok &= r.certified();
            detail.push_str(&format!(
                "m={m} L={l} C={:.4} |G|={} sparse={} dominated={}; ",
                r.constant,
                r.stopping.len(),
                r.martingale && r.dilated_sparse,
                r.dominated
            ));
            cs.push(r.constant);
        }
        let (lo, hi) = cs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
        worst = worst.max(hi / lo - 1.0);
    }
    Ok(Outcome { measured: worst, threshold: 0.2, ok: ok && worst <= 0.2, detail })
}

fn c11_nondegeneracy(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let l = o.tier.max_level().min(6);
    let grid = CellGrid::new(1, 2, l + 2)?;
    let q = Cube::dyadic(&[0], 0);
    let r = nondegeneracy_check(1, &grid, &q, 0.5, o.count(8, 20), o.seed)?;
    let floor = 1.0 - 5.0 * 2f64.powi(-(l as i32));
    let ok = (r.constant - 3.0).abs() < 1e-12 && r.a_min >= floor && r.b_holds;
    // Reported as the larger of both normalized gaps.
    let measured = (floor / r.a_min).max(r.b_max);
    let detail = format!("L={l} C={} a_min={:.6} (floor {floor:.6}) b_max={:.6}", r.constant, r.a_min, r.b_max);
    Ok(Outcome { measured, threshold: 1.0, ok, detail })
}

/// Maximal dyadic cubes with average above `lambda`, by listing the whole family.
fn brute_force_cz_cubes(f: &ScalarField, lambda: f64) -> anyhow::Result<Vec<Cube>> {
    let family = f.grid.dyadic_family();
    let mut above = Vec::new();
    for q in family {
        if f.abs_average(&f.grid.cells_of(&q)?) > lambda {
            above.push(q);
        }
    }
    let mut out: Vec<Cube> =
        above.iter().filter(|q| !above.iter().any(|r| r.strictly_contains(q))).cloned().collect();
    out.sort_by(|a, b| a.corner().cmp(b.corner()).then(a.side().cmp(b.side())));
    Ok(out)
}

fn c12_cz_decomposition(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let mut rng = o.rng(12);
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    for i in 0..100 {
        let grid = if i % 2 == 0 { CellGrid::unit(1, 6) } else { CellGrid::unit(2, 3) };
        let values: Vec<f64> = (0..grid.n_cells())
            .map(|_| {
                if rng.random_bool(0.25) {
                    let v: f64 = rng.random_range(-2.0..4.0);
                    v.exp() * if rng.random_bool(0.3) { -1.0 } else { 1.0 }
                } else {
                    0.0
                }
            })
            .collect();
        let f = ScalarField::new(grid, values)?;
        let base = f.abs_average(&grid.cells_of(&grid.domain())?).max(1e-3);
        let lambda = base * rng.random_range(1.0..12.0);
        let dec = cz_decompose(&f, lambda)?;
        let scale = f.values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let r = dec.reconstruct();
        let recon = r.values.iter().zip(&f.values).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) / scale;
        let bound = 2f64.powi(grid.d as i32) * lambda;
        let good = dec.good.values.iter().fold(0.0f64, |a, v| a.max(v.abs())) / bound;
        let mean = dec
            .bad
            .iter()
            .map(|b| b.values.iter().sum::<f64>().abs() / (b.values.len() as f64 * scale))
            .fold(0.0, f64::max);
        let measure: f64 = dec.cubes.iter().map(|q| q.volume_f64()).sum::<f64>() / (f.l1() / lambda).max(1e-300);
        let mut cubes = dec.cubes.clone();
        cubes.sort_by(|a, b| a.corner().cmp(b.corner()).then(a.side().cmp(b.side())));
        if cubes != brute_force_cz_cubes(&f, lambda)? {
            mismatched += 1;
        }
        let measure = if dec.cubes.is_empty() { 0.0 } else { measure };
        // Tolerances: 1e-12 for the identities, exact ratios for the two inequalities.
        worst = worst.max((recon / 1e-12).max(mean / 1e-12)).max(good).max(measure);
    }
    let detail = format!("100 fields, cube sets differing from brute force: {mismatched}");
    Ok(Outcome { measured: worst, threshold: 1.0, ok: worst <= 1.0 + 1e-12 && mismatched == 0, detail })
}

/// `(1/w(Q)) Σ_{x ∈ Q} max_{R ∋ x} ⟨w⟩_R |cell|` with `R` running over every listed subcube.
fn brute_force_fujii_wilson(w: &ScalarField, q: &Cube) -> anyhow::Result<f64> {
    let grid = w.grid;
    let cells = grid.cells_of(q)?;
    let depth = (cells.len().trailing_zeros()) / grid.d as u32;
    let subs = grid.dyadic_subcubes(q, depth)?;
    let avgs: Vec<(Vec<usize>, f64)> =
        subs.iter().map(|r| grid.cells_of(r).map(|cs| { let a = w.average(&cs); (cs, a) })).collect::<Result<_, _>>()?;
    let mut total = 0.0;
    for &x in &cells {
        total += avgs.iter().filter(|(cs, _)| cs.contains(&x)).map(|(_, a)| *a).fold(0.0, f64::max);
    }
    Ok(total / cells.iter().map(|&c| w.values[c]).sum::<f64>())
}

fn c13_fujii_wilson(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let mut rng = o.rng(13);
    let mut const_dev = 0.0f64;
    for (grid, c) in [(CellGrid::unit(1, 4), 1.0), (CellGrid::unit(1, 5), 2.5), (CellGrid::unit(2, 2), 1e3), (CellGrid::unit(2, 3), 0.1)] {
        let w = ScalarField::constant(grid, c);
        for q in grid.dyadic_family() {
            const_dev = const_dev.max((fujii_wilson(&w, &q)? - 1.0).abs());
        }
    }
    let mut rel = 0.0f64;
    for i in 0..20 {
        let grid = if i % 2 == 0 { CellGrid::unit(1, 5) } else { CellGrid::unit(2, 3) };
        let mut values: Vec<f64> = (0..grid.n_cells()).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect();
        if i % 5 == 0 {
            let k = rng.random_range(0..values.len());
            values[k] = 1e3;
        }
        let w = ScalarField::new(grid, values)?;
        for q in grid.dyadic_family() {
            let a = fujii_wilson(&w, &q)?;
            let b = brute_force_fujii_wilson(&w, &q)?;
            rel = rel.max((a - b).abs() / b);
        }
    }
    let detail = format!("constant weights deviate by {const_dev:e}; 20 random weights");
    Ok(Outcome { measured: rel, threshold: 1e-10, ok: const_dev == 0.0 && rel <= 1e-10, detail })
}

fn c14_weak_type(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let mut rng = o.rng(14);
    let grid = CellGrid::unit(1, 3);
    let family = grid.dyadic_family();
    let vol = grid.cell_volume();
    let mut worst = 0.0f64;
    for i in 0..20 {
        let m = 1 + i % 2;
        let p = if i % 4 < 2 { 1.0 } else { 2.0 };
        let fs: Vec<VectorField> = (0..m).map(|_| random_vectors(&mut rng, grid, 2)).collect();
        let ws: Vec<MatrixWeightField> = (0..m).map(|_| random_weight(&mut rng, grid, 2, 10.0)).collect::<anyhow::Result<_>>()?;
        let wrefs: Vec<&MatrixWeightField> = ws.iter().collect();
        let big = tensor_weight(&wrefs)?;
        let inputs: Vec<Input> = fs.iter().map(Input::Vectors).collect();
        let mk = convex_body_maximal(&inputs, &family)?;
        let weak = weak_norm_maximal(&mk, &big, p, 32)?.value;
        for q in &family {
            let cells = grid.cells_of(q)?;
            let avgs: Vec<Vec<f64>> = fs.iter().map(|f| f.average(&cells)).collect();
            let parts: Vec<&[f64]> = avgs.iter().map(|a| a.as_slice()).collect();
            let u = tensor_vector(&parts);
            let norm = (cells.iter().map(|&c| apply_norm(big.at(c), &u).powf(p)).sum::<f64>() * vol).powf(1.0 / p);
            worst = worst.max(norm / weak);
        }
    }
    Ok(Outcome::at_most(worst, 1.0 + 1e-9, "20 instances, max ‖T_Q f‖ / weak norm over the family".into()))
}

fn diagnostic_inputs(grid: CellGrid, m: usize, ramp: bool) -> Vec<ScalarField> {
    (0..m)
        .map(|j| {
            ScalarField::from_fn(grid, move |x| {
                if (1.0..2.0).contains(&x[0]) {
                    if ramp { j as f64 + x[0] } else { 1.0 }
                } else {
                    0.0
                }
            })
        })
        .collect()
}

fn c15_diagnostics(o: &SuiteOptions) -> anyhow::Result<Outcome> {
    let levels: Vec<u32> = match o.tier {
        Tier::Fast => vec![3, 4, 5],
        Tier::Full => vec![4, 5, 6],
    };
    let floor = 0.1;
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for m in [1usize, 2] {
        let k = riesz_kernel(m, 1)?;
        for ramp in [false, true] {
            let mut cot = Vec::new();
            let mut end = Vec::new();
            for &l in &levels {
                let grid = CellGrid::new(1, 2, l + 2)?;
                let fs = diagnostic_inputs(grid, m, ramp);
                let refs: Vec<&ScalarField> = fs.iter().collect();
                cot.push(cotlar_fit(&k, &refs, &grid.dyadic_family())?);
                end.push(endpoint_fit(&k, &refs)?);
            }
            for series in [&cot, &end] {
                for w in series.windows(2) {
                    worst = worst.max(w[1] / (2.0 * w[0].max(floor)));
                }
                if series.iter().any(|c| !c.is_finite()) {
                    worst = f64::INFINITY;
                }
            }
            let name = if ramp { "ramp" } else { "indicator" };
            detail.push_str(&format!("m={m} {name} cotlar {cot:.4?} endpoint {end:.4?}; "));
        }
    }
    Ok(Outcome::at_most(worst, 1.0, detail))
}
