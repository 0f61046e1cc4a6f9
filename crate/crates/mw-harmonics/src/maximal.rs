//! Maximal operators over finite cube families: scalar, multilinear, matrix-weighted,
//! reducing-operator and convex-body versions, weak norms of body-valued maps, and a
//! stopping-time sparse domination of the convex-body maximal operator.
//!
//! Every supremum runs over an explicit list of grid-aligned cubes; cells covered by
//! no cube of the family get the value zero (or the zero body).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::convex::{
    body_norm, john_ellipsoid, radial, segment_average, sup_support, Body, BodyField, LinearImage, Support,
    TensorBody, Union,
};
use crate::error::{Error, Result};
use crate::geometry::{common_grid, dyadic, is_martingale_sparse, Cube, FamilyTree, SparseFamily};
use crate::grid::{CellGrid, ScalarField, VectorField};
use crate::linalg::{apply_norm, op_norm, sym_eigen};
use crate::muckenhoupt::{recip, ExponentConfig};
use crate::nets::{default_count, full_sphere_net};
use crate::par;
use crate::tensor::tensor_vector;
use crate::weights::{MatrixWeightField, Reducer};

/// Vector- or body-valued input of a maximal operator. A vector field `f` stands for
/// the body field `x ↦ 𝒦(f(x)) = conv{±f(x)}`.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a> {
    Vectors(&'a VectorField),
    Bodies(&'a BodyField),
}

impl<'a> From<&'a VectorField> for Input<'a> {
    fn from(f: &'a VectorField) -> Self {
        Input::Vectors(f)
    }
}

impl<'a> From<&'a BodyField> for Input<'a> {
    fn from(f: &'a BodyField) -> Self {
        Input::Bodies(f)
    }
}

impl Input<'_> {
    pub fn grid(&self) -> &CellGrid {
        match self {
            Input::Vectors(f) => &f.grid,
            Input::Bodies(f) => &f.grid,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Input::Vectors(f) => f.dim,
            Input::Bodies(f) => f.dim,
        }
    }

    /// `h_{F(y)}(e)`, which is `|<f(y), e>|` for vector inputs.
    pub fn support_at(&self, cell: usize, e: &[f64]) -> f64 {
        match self {
            Input::Vectors(f) => f.get(cell).iter().zip(e).map(|(a, b)| a * b).sum::<f64>().abs(),
            Input::Bodies(f) => f.bodies[cell].support(e),
        }
    }

    /// `sup_{u ∈ F(y)} |M u|`.
    pub fn image_norm(&self, m: &DMatrix<f64>, cell: usize) -> f64 {
        match self {
            Input::Vectors(f) => apply_norm(m, f.get(cell)),
            Input::Bodies(f) => body_image_norm(m, &f.bodies[cell]),
        }
    }

    /// `⟨F⟩` over the cells, as a finite hull when one is available exactly.
    pub fn average(&self, cells: &[usize]) -> Body {
        let body = match self {
            Input::Vectors(f) => segment_average(f, cells),
            Input::Bodies(f) => {
                let first = &f.bodies[cells[0]];
                if cells.iter().all(|&c| &f.bodies[c] == first) {
                    return first.clone();
                }
                let w = 1.0 / cells.len() as f64;
                let single: Option<Vec<Vec<f64>>> = cells
                    .iter()
                    .map(|&c| match &f.bodies[c] {
                        Body::Hull { points, .. } if points.len() <= 1 => {
                            Some(points.first().map_or(vec![0.0; f.dim], |p| p.iter().map(|x| x * w).collect()))
                        }
                        _ => None,
                    })
                    .collect();
                match single {
                    Some(generators) => Body::Zonotope { dim: f.dim, generators },
                    None => Body::MinkowskiSum {
                        parts: cells.iter().map(|&c| Body::Scaled { c: w, body: Box::new(f.bodies[c].clone()) }).collect(),
                    },
                }
            }
        };
        body.to_hull().unwrap_or(body)
    }

    fn vector_average(&self, cells: &[usize]) -> Option<Vec<f64>> {
        match self {
            Input::Vectors(f) => Some(f.average(cells)),
            Input::Bodies(_) => None,
        }
    }
}

/// `sup_{u ∈ B} |M u|`: exact for ellipsoids, hulls and low-dimensional zonotopes.
pub fn body_image_norm(m: &DMatrix<f64>, b: &Body) -> f64 {
    match b {
        Body::Ellipsoid { a } => op_norm(&(m * a)),
        Body::Hull { points, .. } => points.iter().fold(0.0, |acc, p| acc.max(apply_norm(m, p))),
        Body::Scaled { c, body } => c * body_image_norm(m, body),
        _ => match b.to_hull() {
            Some(h) => body_image_norm(m, &h),
            None => {
                let image = LinearImage { m: m.clone(), body: b };
                sup_support(&image, default_count(m.nrows()), 0x696d_6167).value
            }
        },
    }
}

fn family_cells(grid: &CellGrid, cubes: &[Cube]) -> Result<Vec<Vec<usize>>> {
    if cubes.is_empty() {
        return Err(Error::Empty("cube family"));
    }
    cubes.iter().map(|q| grid.cells_of(q)).collect()
}

fn common_input_grid(fs: &[Input]) -> Result<CellGrid> {
    let grid = *fs.first().ok_or(Error::Empty("maximal inputs"))?.grid();
    for f in fs {
        grid.same_as(f.grid())?;
    }
    Ok(grid)
}

/// `(avg v^a)^{1/a}` for a positive finite exponent `a`.
fn mean(values: impl Iterator<Item = f64>, a: f64, count: usize) -> f64 {
    let s: f64 = values.map(|v| v.powf(a)).sum();
    (s / count as f64).powf(1.0 / a)
}

fn check_exponents(r: &[f64], m: usize, what: &str) -> Result<()> {
    if r.len() != m {
        return Err(Error::Dimension { expected: m, got: r.len() });
    }
    if let Some(x) = r.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Exponent(format!("{what} exponent {x} must lie in (0, inf)")));
    }
    Ok(())
}

/// Pointwise maximum of per-cube constants.
fn fold_constant(grid: CellGrid, cells: &[Vec<usize>], values: &[f64]) -> ScalarField {
    let mut out = vec![0.0f64; grid.n_cells()];
    for (cs, &v) in cells.iter().zip(values) {
        for &c in cs {
            out[c] = out[c].max(v);
        }
    }
    ScalarField { grid, values: out }
}

/// Pointwise maximum of per-cube functions given on the cube's cells.
fn fold_local(grid: CellGrid, cells: &[Vec<usize>], values: &[Vec<f64>]) -> ScalarField {
    let mut out = vec![0.0f64; grid.n_cells()];
    for (cs, vs) in cells.iter().zip(values) {
        for (&c, &v) in cs.iter().zip(vs) {
            out[c] = out[c].max(v);
        }
    }
    ScalarField { grid, values: out }
}

/// `M_η f(x) = max_{Q ∋ x} ⟨|f|^η⟩_Q^{1/η}`.
pub fn eta_maximal(f: &ScalarField, eta: f64, cubes: &[Cube]) -> Result<ScalarField> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Exponent(format!("eta {eta} must lie in (0, inf)")));
    }
    let cells = family_cells(&f.grid, cubes)?;
    let values = par::map_slice(&cells, |cs| mean(cs.iter().map(|&c| f.values[c].abs()), eta, cs.len()));
    Ok(fold_constant(f.grid, &cells, &values))
}

/// `max_{Q ∋ x} Π_j ⟨|f_j|⟩_Q`.
pub fn multilinear_maximal(fs: &[&ScalarField], cubes: &[Cube]) -> Result<ScalarField> {
    let grid = fs.first().ok_or(Error::Empty("maximal inputs"))?.grid;
    for f in fs {
        grid.same_as(&f.grid)?;
    }
    let cells = family_cells(&grid, cubes)?;
    let values = par::map_slice(&cells, |cs| fs.iter().map(|f| f.abs_average(cs)).product::<f64>());
    Ok(fold_constant(grid, &cells, &values))
}

fn check_weights(fs: &[Input], ws: &[&MatrixWeightField]) -> Result<CellGrid> {
    let grid = common_input_grid(fs)?;
    if ws.len() != fs.len() {
        return Err(Error::Dimension { expected: fs.len(), got: ws.len() });
    }
    for (f, w) in fs.iter().zip(ws) {
        grid.same_as(w.grid())?;
        if w.n() != f.dim() {
            return Err(Error::Dimension { expected: f.dim(), got: w.n() });
        }
    }
    Ok(grid)
}

/// `M_{W⃗,r⃗} F⃗(x) = max_{Q ∋ x} Π_j ⟨‖W_j(x) F_j‖^{r_j}⟩_Q^{1/r_j}`.
pub fn weighted_maximal(fs: &[Input], ws: &[&MatrixWeightField], r: &[f64], cubes: &[Cube]) -> Result<ScalarField> {
    let grid = check_weights(fs, ws)?;
    check_exponents(r, fs.len(), "r")?;
    let cells = family_cells(&grid, cubes)?;
    let values = par::map_slice(&cells, |cs| {
        cs.iter()
            .map(|&x| {
                (0..fs.len())
                    .map(|j| {
                        let wx = ws[j].at(x);
                        mean(cs.iter().map(|&y| fs[j].image_norm(wx, y)), r[j], cs.len())
                    })
                    .product()
            })
            .collect::<Vec<f64>>()
    });
    Ok(fold_local(grid, &cells, &values))
}

/// `max_{Q ∋ x} Π_j ⟨‖A_{W_j⁻¹,Q,t_j}⁻¹ F_j‖^{r_j}⟩_Q^{1/r_j}` with reducing operators
/// from the shared cache.
pub fn auxiliary_maximal(
    fs: &[Input],
    ws: &[&MatrixWeightField],
    r: &[f64],
    t: &[f64],
    cubes: &[Cube],
) -> Result<ScalarField> {
    auxiliary_maximal_with(fs, ws, r, t, cubes, Reducer::global())
}

pub fn auxiliary_maximal_with(
    fs: &[Input],
    ws: &[&MatrixWeightField],
    r: &[f64],
    t: &[f64],
    cubes: &[Cube],
    reducer: &Reducer,
) -> Result<ScalarField> {
    let grid = check_weights(fs, ws)?;
    check_exponents(r, fs.len(), "r")?;
    if t.len() != fs.len() {
        return Err(Error::Dimension { expected: fs.len(), got: t.len() });
    }
    let cells = family_cells(&grid, cubes)?;
    let invs: Vec<MatrixWeightField> = ws.iter().map(|w| w.inverse()).collect();
    let jobs: Vec<(&Cube, &Vec<usize>)> = cubes.iter().zip(&cells).collect();
    let values = par::map_slice(&jobs, |(q, cs)| -> Result<f64> {
        let mut v = 1.0;
        for j in 0..fs.len() {
            let a = &reducer.reduce(&invs[j], q, t[j])?.a;
            let b = a
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Invalid(format!("reducing operator of factor {j} is singular")))?;
            v *= mean(cs.iter().map(|&y| fs[j].image_norm(&b, y)), r[j], cs.len());
        }
        Ok(v)
    });
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(fold_constant(grid, &cells, &values))
}

/// `N_{Q,𝓕}(x) = max_{R ∈ 𝓕, R ⊆ Q, R ∋ x} Π_j ‖W_j(x) A_{W_j⁻¹,R,t_j}‖` on the cells
/// of `Q` (zero elsewhere).
pub fn n_function(
    ws: &[&MatrixWeightField],
    t: &[f64],
    family: &[Cube],
    q: &Cube,
    reducer: &Reducer,
) -> Result<ScalarField> {
    let grid = *ws.first().ok_or(Error::Empty("weights"))?.grid();
    if t.len() != ws.len() {
        return Err(Error::Dimension { expected: ws.len(), got: t.len() });
    }
    let invs: Vec<MatrixWeightField> = ws.iter().map(|w| w.inverse()).collect();
    n_function_inv(ws, &invs, t, family, q, reducer, grid)
}

fn n_function_inv(
    ws: &[&MatrixWeightField],
    invs: &[MatrixWeightField],
    t: &[f64],
    family: &[Cube],
    q: &Cube,
    reducer: &Reducer,
    grid: CellGrid,
) -> Result<ScalarField> {
    let mut out = vec![0.0f64; grid.n_cells()];
    for rc in family.iter().filter(|rc| q.contains(rc)) {
        let mats = (0..ws.len()).map(|j| Ok(reducer.reduce(&invs[j], rc, t[j])?.a.clone())).collect::<Result<Vec<_>>>()?;
        for c in grid.cells_of(rc)? {
            let v: f64 = (0..ws.len()).map(|j| op_norm(&(ws[j].at(c) * &mats[j]))).product();
            out[c] = out[c].max(v);
        }
    }
    Ok(ScalarField { grid, values: out })
}

/// `max_{Q ∈ 𝓕} ⟨N_{Q,𝓕}^p⟩_Q` for `t_j` and `p` taken from the exponent data.
pub fn n_constant(ws: &[&MatrixWeightField], cfg: &ExponentConfig, family: &[Cube]) -> Result<f64> {
    if ws.len() != cfg.m() {
        return Err(Error::Dimension { expected: cfg.m(), got: ws.len() });
    }
    let grid = *ws[0].grid();
    let t: Vec<f64> = cfg.t_inv.iter().map(|&x| recip(x)).collect();
    let p = cfg.p();
    let reducer = Reducer::global();
    let invs: Vec<MatrixWeightField> = ws.iter().map(|w| w.inverse()).collect();
    let per = par::map_slice(family, |q| -> Result<f64> {
        let nf = n_function_inv(ws, &invs, &t, family, q, reducer, grid)?;
        let cells = grid.cells_of(q)?;
        Ok(if p.is_infinite() {
            cells.iter().fold(0.0f64, |m, &c| m.max(nf.values[c]))
        } else {
            cells.iter().map(|&c| nf.values[c].powf(p)).sum::<f64>() / cells.len() as f64
        })
    });
    per.into_iter().try_fold(0.0f64, |m, v| Ok(m.max(v?)))
}

pub(crate) fn lp_norm(values: impl Iterator<Item = f64>, p: f64, vol: f64) -> f64 {
    if p.is_infinite() {
        values.fold(0.0, f64::max)
    } else {
        (values.map(|v| v.powf(p)).sum::<f64>() * vol).powf(1.0 / p)
    }
}

/// `‖M_{W⃗,r⃗} f⃗‖_{L^p} / Π_j ‖f_j‖_{L^{p_j}_{W_j}}` with `r⃗` and `p⃗` from the exponent data.
pub fn strong_type_ratio(fs: &[&VectorField], ws: &[&MatrixWeightField], cfg: &ExponentConfig, cubes: &[Cube]) -> Result<f64> {
    let inputs: Vec<Input> = fs.iter().map(|&f| Input::Vectors(f)).collect();
    let r: Vec<f64> = cfg.r_inv.iter().map(|&x| recip(x)).collect();
    let mf = weighted_maximal(&inputs, ws, &r, cubes)?;
    let vol = mf.grid.cell_volume();
    let num = lp_norm(mf.values.iter().copied(), cfg.p(), vol);
    let den: f64 = (0..fs.len())
        .map(|j| lp_norm((0..mf.grid.n_cells()).map(|c| apply_norm(ws[j].at(c), fs[j].get(c))), recip(cfg.p_inv[j]), vol))
        .product();
    if den == 0.0 {
        return Err(Error::Invalid("inputs vanish in the weighted norm".into()));
    }
    Ok(num / den)
}

/// `M^𝒦 F⃗(x) = 𝒦(∪_{Q ∋ x} ⊗_j ⟨F_j⟩_Q)` stored lazily: one tensor body per cube and,
/// per cell, the cubes containing it.
#[derive(Clone, Debug)]
pub struct ConvexMaximal {
    pub grid: CellGrid,
    pub dims: Vec<usize>,
    pub cubes: Vec<Cube>,
    pub generators: Vec<TensorBody>,
    /// Factor averages `⟨f_j⟩_Q` of vector inputs: a point of each generator.
    pub anchors: Vec<Option<Vec<Vec<f64>>>>,
    pub members: Vec<Vec<usize>>,
}

pub fn convex_body_maximal(fs: &[Input], cubes: &[Cube]) -> Result<ConvexMaximal> {
    let grid = common_input_grid(fs)?;
    let cells = family_cells(&grid, cubes)?;
    let built = par::map_slice(&cells, |cs| -> Result<(TensorBody, Option<Vec<Vec<f64>>>)> {
        let factors: Vec<Body> = fs.iter().map(|f| f.average(cs)).collect();
        let anchor: Option<Vec<Vec<f64>>> = fs.iter().map(|f| f.vector_average(cs)).collect();
        Ok((TensorBody::new(factors)?, anchor))
    });
    let mut generators = Vec::with_capacity(cubes.len());
    let mut anchors = Vec::with_capacity(cubes.len());
    for b in built {
        let (g, a) = b?;
        generators.push(g);
        anchors.push(a);
    }
    let mut members = vec![Vec::new(); grid.n_cells()];
    for (i, cs) in cells.iter().enumerate() {
        for &c in cs {
            members[c].push(i);
        }
    }
    Ok(ConvexMaximal { grid, dims: fs.iter().map(|f| f.dim()).collect(), cubes: cubes.to_vec(), generators, anchors, members })
}

impl ConvexMaximal {
    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn body_at(&self, cell: usize) -> Union<&TensorBody> {
        Union { dim: self.dim(), parts: self.members[cell].iter().map(|&g| &self.generators[g]).collect() }
    }

    pub fn support(&self, cell: usize, v: &[f64]) -> f64 {
        self.members[cell].iter().fold(0.0, |m, &g| m.max(self.generators[g].support(v)))
    }

    /// `sup_{u ∈ M^𝒦(x)} |u|`; the norm of a tensor body is the product of factor norms.
    pub fn norm_at(&self, cell: usize) -> f64 {
        self.members[cell].iter().fold(0.0, |m, &g| {
            let gen = &self.generators[g];
            m.max(gen.scale * gen.factors.iter().map(|f| body_norm(f).value).product::<f64>())
        })
    }

    pub fn norms(&self) -> ScalarField {
        ScalarField { grid: self.grid, values: (0..self.grid.n_cells()).map(|c| self.norm_at(c)).collect() }
    }

    /// True when every generator support is evaluated exactly.
    pub fn exact_support(&self) -> bool {
        self.generators.iter().all(|g| g.exact_support())
    }

    /// Largest `λ` with `λ ⊗_j u_j` in the generator of cube `g` (the set of elementary
    /// tensors, before convexification).
    pub fn generator_radial(&self, g: usize, us: &[Vec<f64>]) -> Result<f64> {
        let gen = &self.generators[g];
        let mut lam = gen.scale;
        for (f, u) in gen.factors.iter().zip(us) {
            lam *= radial(f, u)?;
        }
        Ok(lam)
    }

    /// Inner hull approximation: per cell, the support points of each generator over
    /// `count` directions together with the anchors.
    pub fn to_body_field(&self, count: usize) -> Result<BodyField> {
        let n = self.dim();
        let net = full_sphere_net(n, count, 0x686f_6c6c);
        let per_gen: Vec<Vec<Vec<f64>>> = par::map_slice(&self.generators, |g| {
            net.iter().map(|v| g.support_point(v.as_slice())).collect()
        });
        let bodies = (0..self.grid.n_cells())
            .map(|c| {
                let mut points = Vec::new();
                for &g in &self.members[c] {
                    points.extend(per_gen[g].iter().cloned());
                    if let Some(a) = &self.anchors[g] {
                        let parts: Vec<&[f64]> = a.iter().map(|x| x.as_slice()).collect();
                        points.push(tensor_vector(&parts));
                    }
                }
                Body::Hull { dim: n, points }
            })
            .collect();
        BodyField::new(self.grid, bodies)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakNorm {
    pub value: f64,
    /// Vector `u` attaining the value.
    pub argmax: Vec<f64>,
    pub candidates: usize,
}

/// `max_k λ_k (Σ_{x: λ_x ≥ λ_k} |x|·dens(x)^p)^{1/p}`: the best scaling of one candidate.
fn level_profile(lams: &[f64], dens: &[f64], vol: f64, p: f64) -> (f64, f64) {
    let mut order: Vec<usize> = (0..lams.len()).filter(|&i| lams[i] > 0.0 && dens[i] > 0.0).collect();
    order.sort_by(|&a, &b| lams[b].total_cmp(&lams[a]));
    let mut acc = 0.0f64;
    let mut best = (0.0, 0.0);
    for (k, &i) in order.iter().enumerate() {
        acc = if p.is_infinite() { acc.max(dens[i]) } else { acc + vol * dens[i].powf(p) };
        // Ties: evaluate once the whole level is in.
        if order.get(k + 1).is_some_and(|&nx| lams[nx] == lams[i]) {
            continue;
        }
        let v = lams[i] * if p.is_infinite() { acc } else { acc.powf(1.0 / p) };
        if v > best.0 {
            best = (v, lams[i]);
        }
    }
    best
}

fn check_weak(w: &MatrixWeightField, grid: &CellGrid, dim: usize, p: f64) -> Result<()> {
    if !(p > 0.0) {
        return Err(Error::Exponent(format!("weak-norm exponent {p} must lie in (0, inf]")));
    }
    grid.same_as(w.grid())?;
    if w.n() != dim {
        return Err(Error::Dimension { expected: dim, got: w.n() });
    }
    Ok(())
}

/// `sup_u ‖1_{u ∈ F(x)} u‖_{L^p_W}` over candidate directions (a sphere net and the
/// extreme points of the cell bodies), each scaled optimally through the exact
/// radial functions of the cells.
pub fn weak_norm(f: &BodyField, w: &MatrixWeightField, p: f64) -> Result<WeakNorm> {
    check_weak(w, &f.grid, f.dim, p)?;
    let n = f.dim;
    let mut dirs: Vec<Vec<f64>> = full_sphere_net(n, default_count(n), 0x7765_616b).iter().map(|v| v.as_slice().to_vec()).collect();
    for b in &f.bodies {
        dirs.extend(extreme_points(b));
    }
    let dirs = dedup_directions(dirs);
    let vol = f.grid.cell_volume();
    let scored = par::map_slice(&dirs, |u| -> Result<(f64, f64)> {
        let lams = f.bodies.iter().map(|b| radial(b, u)).collect::<Result<Vec<f64>>>()?;
        let dens: Vec<f64> = (0..f.grid.n_cells()).map(|c| apply_norm(w.at(c), u)).collect();
        Ok(level_profile(&lams, &dens, vol, p))
    });
    best_candidate(&dirs, scored)
}

/// Weak norm of the convex-body maximal function over rank-one candidates `⊗_j u_j`:
/// the anchors of the generators and the factor maximizers of `directions` support
/// evaluations per generator. Membership is tested against the elementary tensors of
/// each generator, so the value is a lower bound for the weak norm of the hull.
pub fn weak_norm_maximal(mk: &ConvexMaximal, w: &MatrixWeightField, p: f64, directions: usize) -> Result<WeakNorm> {
    let n = mk.dim();
    check_weak(w, &mk.grid, n, p)?;
    let net = full_sphere_net(n, directions.max(1), 0x6d6b_7764);
    let mut cands: Vec<Vec<Vec<f64>>> = Vec::new();
    for (g, gen) in mk.generators.iter().enumerate() {
        if let Some(a) = &mk.anchors[g] {
            cands.push(a.clone());
        }
        if directions > 0 {
            for v in &net {
                cands.push(gen.maximizer(v.as_slice()).1);
            }
        }
    }
    cands.retain(|us| us.iter().all(|u| u.iter().any(|&x| x != 0.0)));
    let vol = mk.grid.cell_volume();
    let flat: Vec<Vec<f64>> = cands
        .iter()
        .map(|us| tensor_vector(&us.iter().map(|u| u.as_slice()).collect::<Vec<_>>()))
        .collect();
    let scored = par::map_range(cands.len(), |k| -> Result<(f64, f64)> {
        let rho = (0..mk.generators.len()).map(|g| mk.generator_radial(g, &cands[k])).collect::<Result<Vec<f64>>>()?;
        let lams: Vec<f64> = mk.members.iter().map(|ms| ms.iter().fold(0.0f64, |m, &g| m.max(rho[g]))).collect();
        let dens: Vec<f64> = (0..mk.grid.n_cells()).map(|c| apply_norm(w.at(c), &flat[k])).collect();
        Ok(level_profile(&lams, &dens, vol, p))
    });
    best_candidate(&flat, scored)
}

fn best_candidate(dirs: &[Vec<f64>], scored: Vec<Result<(f64, f64)>>) -> Result<WeakNorm> {
    let mut best = WeakNorm { value: 0.0, argmax: vec![0.0; dirs.first().map_or(0, |d| d.len())], candidates: dirs.len() };
    for (u, s) in dirs.iter().zip(scored) {
        let (v, lam) = s?;
        if v > best.value {
            best.value = v;
            best.argmax = u.iter().map(|x| lam * x).collect();
        }
    }
    Ok(best)
}

fn extreme_points(b: &Body) -> Vec<Vec<f64>> {
    match b {
        Body::Hull { points, .. } => points.clone(),
        Body::Ellipsoid { a } => (0..a.ncols()).map(|k| a.column(k).iter().copied().collect()).collect(),
        Body::Scaled { body, .. } => extreme_points(body),
        _ => match b.to_hull() {
            Some(h) => extreme_points(&h),
            None => full_sphere_net(b.dim(), 8, 0x6578_7472).iter().map(|v| b.support_point(v.as_slice())).collect(),
        },
    }
}

/// Unit directions up to sign, dropping zeros and near-duplicates.
fn dedup_directions(dirs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for d in dirs {
        let nrm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm == 0.0 {
            continue;
        }
        let sign = d.iter().find(|x| x.abs() > 1e-12 * nrm).map_or(1.0, |x| x.signum());
        let u: Vec<f64> = d.iter().map(|x| sign * x / nrm).collect();
        let key: Vec<i64> = u.iter().map(|x| (x * 1e9).round() as i64).collect();
        if seen.insert(key) {
            out.push(u);
        }
    }
    out
}

/// Outcome of the stopping-time construction for `M^𝒦`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaximalSparse {
    pub sparse: Vec<Cube>,
    /// Containment constant `n^{3/2}(2n)^m`, `n = Π n_j`.
    pub bound: f64,
    /// Largest ratio `h_{M^𝒦_𝓕 F(x)}(v) / h_{M^𝒦_𝒮 F(x)}(v)` over the checked pairs.
    pub measured: f64,
    pub martingale_sparse: bool,
    pub directions_per_cell: usize,
    /// True when all supports in the check are exact.
    pub exact_support: bool,
}

impl MaximalSparse {
    pub fn certified(&self) -> bool {
        self.martingale_sparse && self.measured <= self.bound * (1.0 + 1e-9)
    }
}

/// Orthonormal eigenbasis of the John ellipsoid of `B` (any basis if `B = {0}`).
pub(crate) fn john_basis(b: &Body) -> Result<Vec<Vec<f64>>> {
    let n = b.dim();
    let trivial = match b {
        Body::Hull { points, .. } => points.iter().all(|p| p.iter().all(|&x| x == 0.0)),
        Body::Zonotope { generators, .. } => generators.iter().all(|p| p.iter().all(|&x| x == 0.0)),
        _ => false,
    };
    let a = if trivial { DMatrix::identity(n, n) } else { john_ellipsoid(b)?.a };
    let e = sym_eigen(&a);
    Ok((0..n).map(|k| e.eigenvectors.column(k).iter().copied().collect()).collect())
}

/// Stopping-time sparse family for `M^𝒦_𝓕`; containment is then checked on
/// `directions` sphere directions per covered cell.
pub fn maximal_sparse_dominate(fs: &[Input], family: &[Cube]) -> Result<MaximalSparse> {
    maximal_sparse_dominate_with(fs, family, 200)
}

pub fn maximal_sparse_dominate_with(fs: &[Input], family: &[Cube], directions: usize) -> Result<MaximalSparse> {
    let grid = common_input_grid(fs)?;
    if family.is_empty() {
        return Err(Error::Empty("cube family"));
    }
    common_grid(family)?;
    let tree = FamilyTree::build(family);
    let cells = family_cells(&grid, &tree.cubes)?;
    let m = fs.len();
    let n: usize = fs.iter().map(|f| f.dim()).product();
    let threshold = (2.0 * n as f64).powi(m as i32);
    // avg_{y ∈ Q} h_{F_j(y)}(e)
    let avg = |j: usize, q: usize, e: &[f64]| {
        cells[q].iter().map(|&y| fs[j].support_at(y, e)).sum::<f64>() / cells[q].len() as f64
    };
    let mut in_sparse = vec![false; tree.cubes.len()];
    let mut stack: Vec<usize> = tree.roots.clone();
    while let Some(q0) = stack.pop() {
        in_sparse[q0] = true;
        let bases = fs.iter().map(|f| john_basis(&f.average(&cells[q0]))).collect::<Result<Vec<_>>>()?;
        let top: Vec<Vec<f64>> = (0..m).map(|j| bases[j].iter().map(|e| avg(j, q0, e)).collect()).collect();
        let mut queue: Vec<usize> = tree.children[q0].clone();
        while let Some(q) = queue.pop() {
            let here: Vec<Vec<f64>> = (0..m).map(|j| bases[j].iter().map(|e| avg(j, q, e)).collect()).collect();
            if stops(&here, &top, threshold) {
                stack.push(q);
            } else {
                queue.extend(tree.children[q].iter().copied());
            }
        }
    }
    let sparse: Vec<Cube> = (0..tree.cubes.len()).filter(|&i| in_sparse[i]).map(|i| tree.cubes[i].clone()).collect();
    let martingale_sparse = is_martingale_sparse(&SparseFamily::new(sparse.clone()), &dyadic(1, -1))?;

    let mk = convex_body_maximal(fs, &tree.cubes)?;
    let ratios = par::map_range(grid.n_cells(), |c| {
        if mk.members[c].is_empty() {
            return 0.0;
        }
        let net = full_sphere_net(n, directions, 0x7370_6172 ^ c as u64);
        net.iter().fold(0.0f64, |worst, v| {
            let (mut lhs, mut rhs) = (0.0f64, 0.0f64);
            for &g in &mk.members[c] {
                let h = mk.generators[g].support(v.as_slice());
                lhs = lhs.max(h);
                if in_sparse[g] {
                    rhs = rhs.max(h);
                }
            }
            let ratio = if lhs == 0.0 {
                0.0
            } else if rhs == 0.0 {
                f64::INFINITY
            } else {
                lhs / rhs
            };
            worst.max(ratio)
        })
    });
    Ok(MaximalSparse {
        sparse,
        bound: (n as f64).powf(1.5) * threshold,
        measured: ratios.into_iter().fold(0.0, f64::max),
        martingale_sparse,
        directions_per_cell: directions,
        exact_support: mk.exact_support(),
    })
}

/// Some basis tuple `(e_{j,k_j})` with `Π_j here[j][k_j] > c Π_j top[j][k_j]`.
fn stops(here: &[Vec<f64>], top: &[Vec<f64>], c: f64) -> bool {
    let m = here.len();
    let mut k = vec![0usize; m];
    loop {
        let lhs: f64 = (0..m).map(|j| here[j][k[j]]).product();
        let rhs: f64 = (0..m).map(|j| top[j][k[j]]).product();
        if lhs > c * rhs {
            return true;
        }
        let mut j = m;
        loop {
            if j == 0 {
                return false;
            }
            j -= 1;
            k[j] += 1;
            if k[j] < here[j].len() {
                break;
            }
            k[j] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellGrid;

    #[test]
    fn eta_maximal_examples() {
        let grid = CellGrid::unit(1, 3);
        let f = ScalarField::from_fn(grid, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        let fam = grid.dyadic_family();
        let m1 = eta_maximal(&f, 1.0, &fam).unwrap();
        let m2 = eta_maximal(&f, 2.0, &fam).unwrap();
        for c in 4..8 {
            assert_eq!(m1.values[c], 0.5);
            assert!((m2.values[c] - 0.5f64.sqrt()).abs() < 1e-15);
        }
        assert!(eta_maximal(&f, 1.0, &[]).is_err());
    }

    #[test]
    fn multilinear_indicator() {
        let grid = CellGrid::unit(1, 3);
        let f = ScalarField::from_fn(grid, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        let m = multilinear_maximal(&[&f, &f], &grid.dyadic_family()).unwrap();
        assert!(m.values[..4].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_cube_sparse() {
        let grid = CellGrid::unit(1, 2);
        let f = VectorField::new(grid, 2, vec![1.0, 0.0, 0.3, 2.0, -1.0, 0.5, 0.0, 1.0]).unwrap();
        let out = maximal_sparse_dominate(&[Input::Vectors(&f)], &[grid.domain()]).unwrap();
        assert_eq!(out.sparse, vec![grid.domain()]);
        assert!((out.measured - 1.0).abs() < 1e-12);
        assert!(out.certified());
    }

    #[test]
    fn constant_chain_keeps_top() {
        let grid = CellGrid::unit(1, 3);
        let f = VectorField::scaled(&ScalarField::constant(grid, 1.0), &[0.6, -0.8]);
        let chain: Vec<Cube> = (0..4).map(|k| Cube::dyadic(&[0], -k)).collect();
        let out = maximal_sparse_dominate(&[Input::Vectors(&f), Input::Vectors(&f)], &chain).unwrap();
        assert_eq!(out.sparse, vec![Cube::dyadic(&[0], 0)]);
        assert!(out.certified());
    }

    #[test]
    fn weak_norm_of_ball_indicator() {
        let grid = CellGrid::unit(1, 3);
        let bodies = (0..8).map(|c| if c < 3 { Body::ball(2) } else { Body::zero(2) }).collect();
        let f = BodyField::new(grid, bodies).unwrap();
        let w = MatrixWeightField::constant(grid, DMatrix::identity(2, 2)).unwrap();
        for p in [1.0, 2.0, 3.5] {
            let v = weak_norm(&f, &w, p).unwrap().value;
            assert!((v - (3.0f64 / 8.0).powf(1.0 / p)).abs() < 1e-12, "p={p}: {v}");
        }
        let zero = BodyField::new(grid, vec![Body::zero(2); 8]).unwrap();
        assert_eq!(weak_norm(&zero, &w, 2.0).unwrap().value, 0.0);
    }
}
