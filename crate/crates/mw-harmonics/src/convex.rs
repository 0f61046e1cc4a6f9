//! Symmetric convex bodies described through support functions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellGrid, VectorField};
use crate::linalg::{self, nnls, null_space, op_norm, sym_eigen};
use crate::nets::{default_count, full_sphere_net};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Support-function access to a symmetric convex body.
pub trait Support: Sync {
    fn dim(&self) -> usize;
    fn support(&self, v: &[f64]) -> f64;
    /// A point `u` of the body with `<u, v> = support(v)` (or the best one found).
    fn support_point(&self, v: &[f64]) -> Vec<f64>;
}

impl<S: Support + ?Sized> Support for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn support(&self, v: &[f64]) -> f64 {
        (**self).support(v)
    }

    fn support_point(&self, v: &[f64]) -> Vec<f64> {
        (**self).support_point(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SymmetricConvexBody {
    /// `A · (closed unit ball)` for a symmetric positive semidefinite `A`.
    Ellipsoid {
        #[serde(with = "linalg::serde_matrix")]
        a: DMatrix<f64>,
    },
    /// `conv{±p_i}`.
    Hull { dim: usize, points: Vec<Vec<f64>> },
    /// `Σ_i [-g_i, g_i]`.
    Zonotope { dim: usize, generators: Vec<Vec<f64>> },
    MinkowskiSum { parts: Vec<SymmetricConvexBody> },
    Scaled { c: f64, body: Box<SymmetricConvexBody> },
}

pub type Body = SymmetricConvexBody;

impl SymmetricConvexBody {
    pub fn ellipsoid(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Invalid("ellipsoid matrix must be square".into()));
        }
        let defect = (&a - a.transpose()).amax();
        if defect > 1e-12 * a.amax().max(1.0) {
            return Err(Error::NotSymmetric { cell: 0, defect });
        }
        let min = linalg::min_eigenvalue(&a);
        if min < -1e-12 * a.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite { cell: 0, min_eig: min });
        }
        Ok(Body::Ellipsoid { a: linalg::symmetrize(&a) })
    }

    pub fn ball(n: usize) -> Self {
        Body::Ellipsoid { a: DMatrix::identity(n, n) }
    }

    pub fn zero(n: usize) -> Self {
        Body::Hull { dim: n, points: Vec::new() }
    }

    pub fn hull(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().ok_or(Error::Empty("hull points"))?.len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Invalid("hull points of mixed dimension".into()));
        }
        Ok(Body::Hull { dim, points })
    }

    /// The segment `conv{±v}`.
    pub fn segment(v: &[f64]) -> Self {
        Body::Hull { dim: v.len(), points: vec![v.to_vec()] }
    }

    pub fn zonotope(dim: usize, generators: Vec<Vec<f64>>) -> Result<Self> {
        if generators.iter().any(|g| g.len() != dim) {
            return Err(Error::Dimension { expected: dim, got: 0 });
        }
        Ok(Body::Zonotope { dim, generators })
    }

    pub fn sum(parts: Vec<Body>) -> Result<Self> {
        let n = parts.first().ok_or(Error::Empty("Minkowski summands"))?.dim();
        if let Some(p) = parts.iter().find(|p| p.dim() != n) {
            return Err(Error::Dimension { expected: n, got: p.dim() });
        }
        Ok(Body::MinkowskiSum { parts })
    }

    pub fn scaled(c: f64, body: Body) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Invalid(format!("scale {c} must be finite and nonnegative")));
        }
        Ok(Body::Scaled { c, body: Box::new(body) })
    }

    pub fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: v.len() });
        }
        Ok(())
    }

    /// Support function with dimension checking.
    pub fn support_checked(&self, v: &[f64]) -> Result<f64> {
        self.check_dim(v)?;
        Ok(self.support(v))
    }
}

/// Vertices of `Σ_i [-g_i, g_i]` up to sign, for generator spans of dimension at most 3.
/// Returns `None` when the span is larger.
pub fn zonotope_vertices(dim: usize, generators: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let gens: Vec<&Vec<f64>> = generators.iter().filter(|g| g.iter().any(|&x| x != 0.0)).collect();
    if gens.is_empty() {
        return Some(Vec::new());
    }
    let g = DMatrix::from_fn(dim, gens.len(), |r, c| gens[c][r]);
    let svd = g.clone().svd(true, false);
    let u = svd.u.expect("svd with u");
    let smax = svd.singular_values.max();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let rank = order.iter().filter(|&&i| svd.singular_values[i] > 1e-12 * smax).count();
    if rank > 3 {
        return None;
    }
    let basis = DMatrix::from_fn(dim, rank, |r, c| u[(r, order[c])]);
    let coords: Vec<Vec<f64>> = (0..gens.len())
        .map(|c| (basis.transpose() * g.column(c)).iter().copied().collect())
        .collect();
    let local = match rank {
        1 => vec![vec![coords.iter().map(|c| c[0].abs()).sum()]],
        2 => planar_vertices(&coords),
        _ => spatial_vertices(&coords),
    };
    Some(
        local
            .into_iter()
            .map(|v| (&basis * DVector::from_vec(v)).iter().copied().collect())
            .collect(),
    )
}

/// Boundary walk: generators turned into the upper half-plane and sorted by angle.
fn planar_vertices(gens: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut g: Vec<[f64; 2]> = gens
        .iter()
        .map(|c| if c[1] > 0.0 || (c[1] == 0.0 && c[0] > 0.0) { [c[0], c[1]] } else { [-c[0], -c[1]] })
        .collect();
    g.sort_by(|a, b| a[1].atan2(a[0]).total_cmp(&b[1].atan2(b[0])));
    let mut v = [0.0, 0.0];
    for x in &g {
        v[0] -= x[0];
        v[1] -= x[1];
    }
    let mut out = Vec::with_capacity(g.len());
    for x in &g {
        out.push(vec![v[0], v[1]]);
        v[0] += 2.0 * x[0];
        v[1] += 2.0 * x[1];
    }
    out
}

/// Each facet is spanned by a non-parallel generator pair; its vertices take the
/// signs of the remaining generators against the facet normal.
fn spatial_vertices(gens: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = gens.len();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let scale = gens.iter().map(|g| norm(g)).fold(0.0, f64::max);
    let mut push = |v: Vec<f64>| {
        let sign = v.iter().find(|x| x.abs() > 1e-12 * scale).map_or(1.0, |x| x.signum());
        let key: Vec<i64> = v.iter().map(|x| (sign * x / (scale * 1e-10)).round() as i64).collect();
        if seen.insert(key) {
            out.push(v);
        }
    };
    for i in 0..n {
        for k in i + 1..n {
            let (a, b) = (&gens[i], &gens[k]);
            let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
            let cn = norm(&c);
            if cn <= 1e-12 * norm(a) * norm(b) {
                continue;
            }
            let mut base = vec![0.0; 3];
            let mut flat = Vec::new();
            for (l, gl) in gens.iter().enumerate() {
                if l == i || l == k {
                    continue;
                }
                let s = dot(gl, &c);
                if s.abs() <= 1e-12 * cn * norm(gl) {
                    flat.push(l);
                } else {
                    for t in 0..3 {
                        base[t] += s.signum() * gl[t];
                    }
                }
            }
            // Generators lying in the facet plane: take every sign pattern while that is cheap.
            let flat_patterns = if flat.len() <= 6 { 1usize << flat.len() } else { 1 };
            for pat in 0..flat_patterns {
                let mut b0 = base.clone();
                for (bit, &l) in flat.iter().enumerate() {
                    let s = if pat >> bit & 1 == 1 { -1.0 } else { 1.0 };
                    for t in 0..3 {
                        b0[t] += s * gens[l][t];
                    }
                }
                for (si, sk) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    push((0..3).map(|t| b0[t] + si * a[t] + sk * b[t]).collect());
                }
            }
        }
    }
    out
}

impl SymmetricConvexBody {
    /// The same body as a finite hull, when one is available exactly.
    pub fn to_hull(&self) -> Option<Body> {
        match self {
            Body::Hull { .. } => Some(self.clone()),
            Body::Zonotope { dim, generators } => {
                zonotope_vertices(*dim, generators).map(|points| Body::Hull { dim: *dim, points })
            }
            Body::Scaled { c, body } => match body.to_hull()? {
                Body::Hull { dim, points } => Some(Body::Hull {
                    dim,
                    points: points.into_iter().map(|p| p.into_iter().map(|x| c * x).collect()).collect(),
                }),
                _ => None,
            },
            _ => None,
        }
    }
}

/// `sup{λ ≥ 0 : λu ∈ B}` (infinite for `u = 0`).
///
/// Exact for ellipsoids; for hulls the value is the feasible end of a bisection on the
/// membership test, whose residual tolerance is `1e-10` relative. Other bodies are first converted
/// to hulls where possible and otherwise bisected on the net membership test.
pub fn radial(b: &Body, u: &[f64]) -> Result<f64> {
    b.check_dim(u)?;
    let un = norm(u);
    if un == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(match b {
        Body::Ellipsoid { a } => {
            let svd = a.clone().svd(true, true);
            let smax = svd.singular_values.max();
            if smax == 0.0 {
                return Ok(0.0);
            }
            let target = DVector::from_column_slice(u);
            let x = svd.solve(&target, 1e-12 * smax).expect("svd with u and v");
            if (a * &x - &target).norm() > 1e-10 * (un + smax) {
                0.0
            } else {
                1.0 / x.norm()
            }
        }
        Body::Hull { points, .. } => {
            if points.is_empty() {
                return Ok(0.0);
            }
            if u.len() == 1 {
                return Ok(points.iter().fold(0.0f64, |m, p| m.max(p[0].abs())) / un);
            }
            if u.len() == 2 {
                if let Some(r) = polygon_radial(points, u) {
                    return Ok(r);
                }
            }
            let hi = points.iter().fold(0.0f64, |m, p| m.max(norm(p))) / un;
            // Points on the ray through u are certified without the solver.
            let on_ray = points
                .iter()
                .filter(|p| (dot(p, u).abs() - norm(p) * un).abs() <= 1e-12 * norm(p) * un)
                .fold(0.0f64, |m, p| m.max(norm(p) / un));
            bisect_radial(u, hi, |v| hull_contains(points, v)).max(on_ray)
        }
        Body::Scaled { c, body } => c * radial(body, u)?,
        _ => match b.to_hull() {
            Some(h) => radial(&h, u)?,
            None => {
                let hi = body_norm(b).value * (1.0 + 1e-9) / un;
                bisect_radial(u, hi, |v| net_contains(b, v, 0.0, 0x7261_6469))
            }
        },
    })
}

/// Ray exit through the boundary of `conv{±p_i}` in the plane; `None` when the
/// hull has no interior.
fn polygon_radial(points: &[Vec<f64>], u: &[f64]) -> Option<f64> {
    let cross = |a: [f64; 2], b: [f64; 2]| a[0] * b[1] - a[1] * b[0];
    let mut pts: Vec<[f64; 2]> = points.iter().flat_map(|p| [[p[0], p[1]], [-p[0], -p[1]]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return None;
    }
    // Monotone chain, counter-clockwise.
    let sub = |a: [f64; 2], b: [f64; 2]| [a[0] - b[0], a[1] - b[1]];
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(sub(hull[hull.len() - 1], hull[hull.len() - 2]), sub(p, hull[hull.len() - 2])) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let area: f64 = (0..hull.len()).map(|i| cross(hull[i], hull[(i + 1) % hull.len()])).sum::<f64>() / 2.0;
    let scale = pts.iter().fold(0.0f64, |m, p| m.max(p[0].hypot(p[1])));
    if hull.len() < 3 || area <= 1e-12 * scale * scale {
        return None;
    }
    let u = [u[0], u[1]];
    let mut best: Option<f64> = None;
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        let e = sub(b, a);
        let den = cross(u, e);
        if den <= 0.0 {
            continue;
        }
        let lambda = cross(a, e) / den;
        let t = cross(a, u) / den;
        if (-1e-12..=1.0 + 1e-12).contains(&t) && lambda >= 0.0 {
            best = Some(best.map_or(lambda, |m: f64| m.max(lambda)));
        }
    }
    best
}

fn bisect_radial(u: &[f64], hi: f64, inside: impl Fn(&[f64]) -> bool) -> f64 {
    let at = |l: f64| u.iter().map(|x| l * x).collect::<Vec<f64>>();
    if inside(&at(hi)) {
        return hi;
    }
    let (mut lo, mut hi) = (0.0, hi);
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if inside(&at(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

impl Support for SymmetricConvexBody {
    fn dim(&self) -> usize {
        match self {
            Body::Ellipsoid { a } => a.nrows(),
            Body::Hull { dim, .. } | Body::Zonotope { dim, .. } => *dim,
            Body::MinkowskiSum { parts } => parts[0].dim(),
            Body::Scaled { body, .. } => body.dim(),
        }
    }

    fn support(&self, v: &[f64]) -> f64 {
        match self {
            Body::Ellipsoid { a } => linalg::apply_norm(a, v),
            Body::Hull { points, .. } => points.iter().fold(0.0, |m, p| m.max(dot(p, v).abs())),
            Body::Zonotope { generators, .. } => generators.iter().map(|g| dot(g, v).abs()).sum(),
            Body::MinkowskiSum { parts } => parts.iter().map(|p| p.support(v)).sum(),
            Body::Scaled { c, body } => c * body.support(v),
        }
    }

    fn support_point(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        match self {
            Body::Ellipsoid { a } => {
                let av = a * DVector::from_column_slice(v);
                let s = av.norm();
                if s == 0.0 {
                    return vec![0.0; n];
                }
                (a * av / s).iter().copied().collect()
            }
            Body::Hull { points, .. } => {
                let mut best = (0.0, vec![0.0; n]);
                for p in points {
                    let s = dot(p, v);
                    if s.abs() > best.0 {
                        best = (s.abs(), p.iter().map(|x| x * s.signum()).collect());
                    }
                }
                best.1
            }
            Body::Zonotope { generators, .. } => {
                let mut out = vec![0.0; n];
                for g in generators {
                    let s = dot(g, v).signum();
                    for (o, x) in out.iter_mut().zip(g) {
                        *o += s * x;
                    }
                }
                out
            }
            Body::MinkowskiSum { parts } => {
                let mut out = vec![0.0; n];
                for p in parts {
                    for (o, x) in out.iter_mut().zip(p.support_point(v)) {
                        *o += x;
                    }
                }
                out
            }
            Body::Scaled { c, body } => body.support_point(v).into_iter().map(|x| c * x).collect(),
        }
    }
}

/// Result of a supremum estimate over the sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    /// True when the value is exact rather than a sampled lower bound.
    pub exact: bool,
    pub directions: usize,
    pub argmax: Vec<f64>,
}

/// `sup_{|v| = 1} h(v)` by a direction net followed by fixed-point ascent
/// `v <- p(v)/|p(v)|`, which never decreases `h`.
pub fn sup_support<S: Support + ?Sized>(s: &S, count: usize, seed: u64) -> NormEstimate {
    let n = s.dim();
    let net = full_sphere_net(n, count, seed);
    let mut scored: Vec<(f64, Vec<f64>)> =
        net.iter().map(|v| (s.support(v.as_slice()), v.as_slice().to_vec())).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = (0.0, vec![0.0; n]);
    for (h0, v0) in scored.into_iter().take(6) {
        let (mut h, mut v) = (h0, v0);
        for _ in 0..200 {
            let p = s.support_point(&v);
            let pn = norm(&p);
            if pn == 0.0 {
                break;
            }
            let w: Vec<f64> = p.iter().map(|x| x / pn).collect();
            let hw = s.support(&w);
            if hw <= h * (1.0 + 1e-15) {
                break;
            }
            h = hw;
            v = w;
        }
        if h > best.0 {
            best = (h, v);
        }
    }
    NormEstimate { value: best.0, exact: false, directions: count, argmax: best.1 }
}

/// `sup_{u in B} |u|`.
pub fn body_norm(b: &Body) -> NormEstimate {
    let n = b.dim();
    match b {
        Body::Ellipsoid { a } => NormEstimate { value: op_norm(a), exact: true, directions: 0, argmax: vec![] },
        Body::Hull { points, .. } => {
            let mut best = (0.0, vec![0.0; n]);
            for p in points {
                let r = norm(p);
                if r > best.0 {
                    best = (r, p.clone());
                }
            }
            NormEstimate { value: best.0, exact: true, directions: 0, argmax: best.1 }
        }
        Body::Scaled { c, body } => {
            let mut e = body_norm(body);
            e.value *= c;
            e
        }
        _ => sup_support(b, default_count(n), 0x6e6f726d),
    }
}

/// Image of a body under a linear map `M`: support `h_B(Mᵀ v)`.
pub struct LinearImage<'a, S: Support + ?Sized> {
    pub m: DMatrix<f64>,
    pub body: &'a S,
}

impl<S: Support + ?Sized> Support for LinearImage<'_, S> {
    fn dim(&self) -> usize {
        self.m.nrows()
    }

    fn support(&self, v: &[f64]) -> f64 {
        let w = self.m.transpose() * DVector::from_column_slice(v);
        self.body.support(w.as_slice())
    }

    fn support_point(&self, v: &[f64]) -> Vec<f64> {
        let w = self.m.transpose() * DVector::from_column_slice(v);
        let p = self.body.support_point(w.as_slice());
        (&self.m * DVector::from_vec(p)).iter().copied().collect()
    }
}

/// Convex hull of a union of bodies: support is the maximum of the supports.
pub struct Union<S> {
    pub dim: usize,
    pub parts: Vec<S>,
}

impl<S: Support> Support for Union<S> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn support(&self, v: &[f64]) -> f64 {
        self.parts.iter().fold(0.0, |m, p| m.max(p.support(v)))
    }

    fn support_point(&self, v: &[f64]) -> Vec<f64> {
        let mut best = (0.0, vec![0.0; self.dim]);
        for p in &self.parts {
            let h = p.support(v);
            if h > best.0 {
                best = (h, p.support_point(v));
            }
        }
        best.1
    }
}

/// Minkowski sum of lazily represented bodies.
pub struct LazySum<S> {
    pub dim: usize,
    pub parts: Vec<S>,
}

impl<S: Support> Support for LazySum<S> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn support(&self, v: &[f64]) -> f64 {
        self.parts.iter().map(|p| p.support(v)).sum()
    }

    fn support_point(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for p in &self.parts {
            for (o, x) in out.iter_mut().zip(p.support_point(v)) {
                *o += x;
            }
        }
        out
    }
}

/// `𝒦({u_1 ⊗ ... ⊗ u_m : u_j ∈ B_j})`, scaled by `scale`.
///
/// The support is exact for one factor, for two ellipsoids (top singular value) and
/// when all factors but one are hulls with few vertex tuples; otherwise it is the best value of an
/// alternating maximization with several starts, hence a lower bound.
#[derive(Clone, Debug)]
pub struct TensorBody {
    pub factors: Vec<Body>,
    pub scale: f64,
    dims: Vec<usize>,
}

impl TensorBody {
    pub fn new(factors: Vec<Body>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Empty("tensor factors"));
        }
        let dims = factors.iter().map(|f| f.dim()).collect();
        Ok(TensorBody { factors, scale: 1.0, dims })
    }

    pub fn with_scale(mut self, c: f64) -> Self {
        self.scale = c;
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Maximizing factor tuple `(u_j)` of `<v, ⊗u_j>` and the unscaled maximum.
    pub fn maximizer(&self, v: &[f64]) -> (f64, Vec<Vec<f64>>) {
        self.best(v)
    }

    /// True when `support` is computed exactly rather than by alternating ascent.
    pub fn exact_support(&self) -> bool {
        self.dims.len() == 1
            || self.enumeration_plan().is_some()
            || matches!(&self.factors[..], [Body::Ellipsoid { .. }, Body::Ellipsoid { .. }])
    }

    /// Contract `v` against `⊗_{i != j} u_i`, leaving a vector in factor `j`.
    fn contract_except(&self, v: &[f64], us: &[Vec<f64>], j: usize) -> Vec<f64> {
        let m = self.dims.len();
        let mut out = vec![0.0; self.dims[j]];
        let mut k = vec![0usize; m];
        for &vi in v {
            let mut w = vi;
            for i in 0..m {
                if i != j {
                    w *= us[i][k[i]];
                }
            }
            out[k[j]] += w;
            for i in (0..m).rev() {
                k[i] += 1;
                if k[i] < self.dims[i] {
                    break;
                }
                k[i] = 0;
            }
        }
        out
    }

    /// Free factor of an exact enumeration: every other factor is a hull and the
    /// product of their vertex counts is small.
    fn enumeration_plan(&self) -> Option<usize> {
        let sizes: Vec<Option<usize>> = self
            .factors
            .iter()
            .map(|f| match f {
                Body::Hull { points, .. } => Some(points.len()),
                _ => None,
            })
            .collect();
        let free = match sizes.iter().filter(|s| s.is_none()).count() {
            0 => (0..sizes.len()).max_by_key(|&j| sizes[j].unwrap_or(0))?,
            1 => sizes.iter().position(|s| s.is_none())?,
            _ => return None,
        };
        let mut count = 1usize;
        for (j, s) in sizes.iter().enumerate() {
            if j != free {
                count = count.checked_mul(s.unwrap_or(0).max(1))?;
            }
        }
        (count <= 4096).then_some(free)
    }

    fn best(&self, v: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let m = self.dims.len();
        if m == 1 {
            return (self.factors[0].support(v), vec![self.factors[0].support_point(v)]);
        }
        if let Some(free) = self.enumeration_plan() {
            let lists: Vec<&[Vec<f64>]> = self
                .factors
                .iter()
                .map(|f| match f {
                    Body::Hull { points, .. } => points.as_slice(),
                    _ => &[],
                })
                .collect();
            let mut best = (0.0, self.dims.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>());
            if (0..m).any(|j| j != free && lists[j].is_empty()) {
                return best;
            }
            let mut k = vec![0usize; m];
            loop {
                let mut us: Vec<Vec<f64>> =
                    (0..m).map(|j| if j == free { Vec::new() } else { lists[j][k[j]].clone() }).collect();
                let w = self.contract_except(v, &us, free);
                let h = self.factors[free].support(&w);
                if h > best.0 {
                    us[free] = self.factors[free].support_point(&w);
                    best = (h, us);
                }
                let mut carry = true;
                for j in (0..m).filter(|&j| j != free) {
                    k[j] += 1;
                    if k[j] < lists[j].len() {
                        carry = false;
                        break;
                    }
                    k[j] = 0;
                }
                if carry {
                    break;
                }
            }
            return best;
        }
        if let [Body::Ellipsoid { a: a1 }, Body::Ellipsoid { a: a2 }] = &self.factors[..] {
            let vm = DMatrix::from_row_slice(self.dims[0], self.dims[1], v);
            let svd = (a1 * vm * a2).svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let i = svd.singular_values.imax();
            let s = svd.singular_values[i];
            let u1: Vec<f64> = (a1 * u.column(i)).iter().copied().collect();
            let u2: Vec<f64> = (a2 * vt.row(i).transpose()).iter().copied().collect();
            return (s, vec![u1, u2]);
        }
        self.alternating(v)
    }

    fn alternating(&self, v: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let m = self.dims.len();
        let mut rng = ChaCha8Rng::seed_from_u64(0x7465_6e73);
        let mut best = (0.0, self.dims.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>());
        for start in 0..6 {
            let mut us: Vec<Vec<f64>> = self
                .factors
                .iter()
                .map(|f| {
                    let d: Vec<f64> = (0..f.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
                    f.support_point(&d)
                })
                .collect();
            if start == 0 {
                // Seed factor 0 from the largest entry of v.
                let k = v.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|x| x.0);
                if let Some(k) = k {
                    let mut idx = k;
                    let mut multi = vec![0; m];
                    for i in (0..m).rev() {
                        multi[i] = idx % self.dims[i];
                        idx /= self.dims[i];
                    }
                    for (i, f) in self.factors.iter().enumerate() {
                        let mut e = vec![0.0; self.dims[i]];
                        e[multi[i]] = 1.0;
                        us[i] = f.support_point(&e);
                    }
                }
            }
            let mut h = 0.0;
            for _ in 0..300 {
                let mut improved = false;
                for j in 0..m {
                    let w = self.contract_except(v, &us, j);
                    let hj = self.factors[j].support(&w);
                    if hj > h * (1.0 + 1e-14) + 1e-300 {
                        improved = true;
                    }
                    h = h.max(hj);
                    us[j] = self.factors[j].support_point(&w);
                }
                if !improved {
                    break;
                }
            }
            if h > best.0 {
                best = (h, us);
            }
        }
        best
    }
}

impl Support for TensorBody {
    fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    fn support(&self, v: &[f64]) -> f64 {
        self.scale * self.best(v).0
    }

    fn support_point(&self, v: &[f64]) -> Vec<f64> {
        let (_, us) = self.best(v);
        let parts: Vec<&[f64]> = us.iter().map(|u| u.as_slice()).collect();
        crate::tensor::tensor_vector(&parts).into_iter().map(|x| self.scale * x).collect()
    }
}

/// Certified check `<u, v> <= (1 + tol) h(v)` for all directions.
///
/// Exact for ellipsoids (through `A⁺u`) and hulls (through a nonnegative least-squares
/// feasibility problem); other bodies are checked over a direction net, the direction
/// of `u`, and a local refinement of the worst net directions.
pub fn contains(b: &Body, u: &[f64], tol: f64) -> Result<bool> {
    if tol < 0.0 || tol.is_nan() {
        return Err(Error::Invalid(format!("tolerance {tol} must be nonnegative")));
    }
    b.check_dim(u)?;
    let scaled: Vec<f64> = u.iter().map(|x| x / (1.0 + tol)).collect();
    Ok(match b {
        Body::Ellipsoid { a } => {
            let svd = a.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let target = DVector::from_column_slice(&scaled);
            if smax == 0.0 {
                return Ok(norm(u) == 0.0);
            }
            let x = svd.solve(&target, 1e-12 * smax).expect("svd with u and v");
            let resid = (a * &x - &target).norm();
            resid <= 1e-10 * (norm(u) + smax) && x.norm() <= 1.0 + 1e-12
        }
        Body::Hull { points, .. } => hull_contains(points, &scaled),
        Body::Scaled { c, body } => {
            if *c == 0.0 {
                norm(u) == 0.0
            } else {
                let v: Vec<f64> = u.iter().map(|x| x / c).collect();
                contains(body, &v, tol)?
            }
        }
        _ => net_contains(b, u, tol, 0x636f6e74),
    })
}

fn hull_contains(points: &[Vec<f64>], u: &[f64]) -> bool {
    let n = u.len();
    if points.is_empty() {
        return norm(u) == 0.0;
    }
    let cols = 2 * points.len() + 1;
    let mut a = DMatrix::zeros(n + 1, cols);
    for (i, p) in points.iter().enumerate() {
        for k in 0..n {
            a[(k, 2 * i)] = p[k];
            a[(k, 2 * i + 1)] = -p[k];
        }
        a[(n, 2 * i)] = 1.0;
        a[(n, 2 * i + 1)] = 1.0;
    }
    a[(n, cols - 1)] = 1.0;
    let mut b = DVector::zeros(n + 1);
    b.as_mut_slice()[..n].copy_from_slice(u);
    b[n] = 1.0;
    let scale = points.iter().fold(norm(u), |m, p| m.max(norm(p))).max(1e-300);
    let (_, res) = nnls(&a, &b);
    res <= 1e-10 * scale.max(1.0)
}

/// Exact membership `u ∈ (1 + tol) Σ_i conv{±P_i}` through one nonnegative least-squares
/// problem with a simplex row per summand.
pub fn hull_sum_contains(parts: &[&[Vec<f64>]], u: &[f64], tol: f64) -> bool {
    let n = u.len();
    let parts: Vec<&[Vec<f64>]> = parts.iter().copied().filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        return norm(u) == 0.0;
    }
    let k = parts.len();
    let cols: usize = parts.iter().map(|p| 2 * p.len() + 1).sum();
    let mut a = DMatrix::zeros(n + k, cols);
    let mut col = 0;
    for (i, p) in parts.iter().enumerate() {
        for q in p.iter() {
            for r in 0..n {
                a[(r, col)] = q[r];
                a[(r, col + 1)] = -q[r];
            }
            a[(n + i, col)] = 1.0;
            a[(n + i, col + 1)] = 1.0;
            col += 2;
        }
        a[(n + i, col)] = 1.0;
        col += 1;
    }
    let mut b = DVector::zeros(n + k);
    for r in 0..n {
        b[r] = u[r] / (1.0 + tol);
    }
    for i in 0..k {
        b[n + i] = 1.0;
    }
    let scale = parts.iter().flat_map(|p| p.iter()).fold(norm(u), |m, p| m.max(norm(p))).max(1e-300);
    let (_, res) = nnls(&a, &b);
    res <= 1e-10 * scale.max(1.0)
}

/// Net-based membership: `<u, v> <= (1 + tol) h(v)` at every tested direction.
pub fn net_contains<S: Support + ?Sized>(b: &S, u: &[f64], tol: f64, seed: u64) -> bool {
    let n = b.dim();
    let slack = |v: &[f64]| (1.0 + tol) * b.support(v) - dot(u, v);
    let floor = 1e-12 * norm(u);
    let un = norm(u);
    if un == 0.0 {
        return true;
    }
    let dir: Vec<f64> = u.iter().map(|x| x / un).collect();
    if slack(&dir) < -floor {
        return false;
    }
    let net = full_sphere_net(n, 2 * default_count(n), seed);
    let mut scored: Vec<(f64, Vec<f64>)> = net.iter().map(|v| (slack(v.as_slice()), v.as_slice().to_vec())).collect();
    if scored.iter().any(|s| s.0 < -floor) {
        return false;
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (s0, v0) in scored.into_iter().take(4) {
        let (mut s, mut v) = (s0, v0);
        let mut step = 0.1;
        for _ in 0..200 {
            let mut w: Vec<f64> = v.iter().map(|x| x + step * (rng.random::<f64>() - 0.5)).collect();
            let wn = norm(&w);
            w.iter_mut().for_each(|x| *x /= wn);
            let sw = slack(&w);
            if sw < s {
                s = sw;
                v = w;
            } else {
                step *= 0.8;
            }
            if s < -floor {
                return false;
            }
            if step < 1e-9 {
                break;
            }
        }
    }
    true
}

/// John ellipsoid `E = A·ball` of a symmetric body with `c_in E ⊆ B ⊆ c_out E`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JohnEllipsoid {
    #[serde(with = "linalg::serde_matrix")]
    pub a: DMatrix<f64>,
    pub c_in: f64,
    pub c_out: f64,
    /// Orthonormal directions where the body is flat; `A` vanishes on them.
    pub null_directions: Vec<Vec<f64>>,
    pub rank: usize,
    pub iterations: usize,
    pub converged: bool,
    pub tau: f64,
}

impl JohnEllipsoid {
    /// `A⁻¹` on the range of `A` (the pseudo-inverse).
    pub fn inverse(&self) -> DMatrix<f64> {
        let e = sym_eigen(&self.a);
        let tol = 1e-12 * e.eigenvalues.amax().max(1e-300);
        let d = DMatrix::from_diagonal(&e.eigenvalues.map(|x| if x > tol { 1.0 / x } else { 0.0 }));
        &e.eigenvectors * d * e.eigenvectors.transpose()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JohnOptions {
    pub tau: f64,
    pub max_iter: usize,
    /// Boundary directions sampled for bodies that are not finite hulls.
    pub directions: Option<usize>,
    pub seed: u64,
}

impl Default for JohnOptions {
    fn default() -> Self {
        JohnOptions { tau: 1e-6, max_iter: 100_000, directions: None, seed: 0x4a6f686e }
    }
}

pub fn john_ellipsoid(b: &Body) -> Result<JohnEllipsoid> {
    john_ellipsoid_with(b, &JohnOptions::default())
}

pub fn john_ellipsoid_with(b: &Body, opts: &JohnOptions) -> Result<JohnEllipsoid> {
    match b {
        Body::Hull { points, dim } => john_of_points(*dim, points, opts),
        Body::Ellipsoid { a } => {
            let mut j = john_of_points(a.nrows(), &[], opts)?;
            let e = sym_eigen(a);
            let tol = 1e-12 * e.eigenvalues.amax().max(1e-300);
            j.a = a.clone();
            j.null_directions = (0..a.nrows())
                .filter(|&i| e.eigenvalues[i] <= tol)
                .map(|i| e.eigenvectors.column(i).iter().copied().collect())
                .collect();
            j.rank = a.nrows() - j.null_directions.len();
            j.c_in = 1.0;
            j.c_out = 1.0;
            j.converged = true;
            Ok(j)
        }
        Body::Scaled { c, body } => {
            let mut j = john_ellipsoid_with(body, opts)?;
            j.a *= *c;
            Ok(j)
        }
        _ => john_of_support(b, opts),
    }
}

/// John ellipsoid of a body known only through its support function: the hull of
/// sampled support points gives `A` with `A·ball ⊆ B`; the outer factor is measured
/// on `A⁻¹B` and the sample is refined where it is too large.
pub fn john_of_support<S: Support + ?Sized>(b: &S, opts: &JohnOptions) -> Result<JohnEllipsoid> {
    let n = b.dim();
    let count = opts.directions.unwrap_or_else(|| default_count(n));
    let mut points: Vec<Vec<f64>> =
        full_sphere_net(n, count, opts.seed).iter().map(|v| b.support_point(v.as_slice())).collect();
    let mut john = john_of_points(n, &points, opts)?;
    for round in 0..6 {
        let inv = john.inverse();
        let image = LinearImage { m: inv, body: b };
        let est = sup_support(&image, count, opts.seed.wrapping_add(round + 1));
        let rank = john.rank.max(1) as f64;
        john.c_out = john.c_out.max(est.value);
        if est.value <= (rank * (1.0 + opts.tau)).sqrt() * (1.0 + 1e-9) {
            break;
        }
        // Add the offending boundary points and re-solve.
        let w = image.m.transpose() * DVector::from_vec(est.argmax.clone());
        points.push(b.support_point(w.as_slice()));
        for v in full_sphere_net(n, count / 4 + 1, opts.seed.wrapping_add(100 + round)) {
            let dir = image.m.transpose() * v;
            points.push(b.support_point(dir.as_slice()));
        }
        john = john_of_points(n, &points, opts)?;
    }
    Ok(john)
}

/// John ellipsoid of `conv{±p_i}` via Khachiyan's algorithm with away steps.
pub fn john_of_points(n: usize, points: &[Vec<f64>], opts: &JohnOptions) -> Result<JohnEllipsoid> {
    if points.iter().any(|p| p.len() != n) {
        return Err(Error::Invalid("points of mixed dimension".into()));
    }
    let empty = JohnEllipsoid {
        a: DMatrix::zeros(n, n),
        c_in: 1.0,
        c_out: 1.0,
        null_directions: (0..n).map(|i| (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect()).collect(),
        rank: 0,
        iterations: 0,
        converged: true,
        tau: opts.tau,
    };
    if points.is_empty() {
        return Ok(empty);
    }
    let pm = DMatrix::from_fn(points.len(), n, |i, k| points[i][k]);
    let svd = pm.clone().svd(false, true);
    let vt = svd.v_t.clone().expect("requested v_t");
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(empty);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-12 * smax).collect();
    let r = keep.len();
    let basis = DMatrix::from_fn(n, r, |k, c| vt[(keep[c], k)]);
    let null_directions: Vec<Vec<f64>> = if r < n {
        null_space(&basis.transpose(), 1e-9).into_iter().map(|v| v.iter().copied().collect()).collect()
    } else {
        Vec::new()
    };
    let ys: Vec<DVector<f64>> = points.iter().map(|p| basis.transpose() * DVector::from_column_slice(p)).collect();
    let (x, iterations, converged) = core_set_design(r, &ys, opts);
    let ar = linalg::sym_sqrt(&x);
    let ar_inv = linalg::sym_pow(&x, -0.5);
    let c_out = ys.iter().map(|y| (&ar_inv * y).norm()).fold(0.0, f64::max);
    let a = &basis * ar * basis.transpose();
    Ok(JohnEllipsoid {
        a: linalg::symmetrize(&a),
        c_in: 1.0,
        c_out,
        null_directions,
        rank: r,
        iterations,
        converged,
        tau: opts.tau,
    })
}

/// Optimal design on a growing subset of the points: solve on the active set, then
/// add the points of the full set that violate the stopping rule.
fn core_set_design(n: usize, ys: &[DVector<f64>], opts: &JohnOptions) -> (DMatrix<f64>, usize, bool) {
    let nf = n as f64;
    let mut active: Vec<usize> = Vec::new();
    for k in 0..n {
        let j = (0..ys.len()).max_by(|&a, &b| ys[a][k].abs().total_cmp(&ys[b][k].abs())).unwrap();
        if !active.contains(&j) {
            active.push(j);
        }
    }
    let mut total = 0;
    loop {
        let sub: Vec<DVector<f64>> = active.iter().map(|&i| ys[i].clone()).collect();
        let full_rank = {
            let m = DMatrix::from_fn(n, sub.len(), |r, c| sub[c][r]);
            m.rank(1e-10 * m.amax().max(1e-300)) == n
        };
        if !full_rank && active.len() < ys.len() {
            let mut order: Vec<usize> = (0..ys.len()).filter(|i| !active.contains(i)).collect();
            order.sort_by(|&a, &b| ys[b].norm().total_cmp(&ys[a].norm()));
            active.extend(order.into_iter().take(n));
            continue;
        }
        let (w, it, conv) = khachiyan(n, &sub, opts.tau, opts.max_iter.saturating_sub(total).max(1));
        total += it;
        let mut x = DMatrix::zeros(n, n);
        for (wi, y) in w.iter().zip(&sub) {
            if *wi > 0.0 {
                x += *wi * y * y.transpose();
            }
        }
        let Some(xinv) = x.clone().try_inverse() else { return (x, total, false) };
        let bound = nf * (1.0 + opts.tau);
        let mut viol: Vec<(f64, usize)> = (0..ys.len())
            .filter(|i| !active.contains(i))
            .map(|i| (ys[i].dot(&(&xinv * &ys[i])), i))
            .filter(|(g, _)| *g > bound)
            .collect();
        if viol.is_empty() || !conv || total >= opts.max_iter {
            return (x, total, conv && viol.is_empty());
        }
        viol.sort_by(|a, b| b.0.total_cmp(&a.0));
        active.extend(viol.into_iter().take(2 * n + 8).map(|v| v.1));
    }
}

/// Weights `w` on the points maximizing `log det Σ w_i y_i y_iᵀ`; stops once
/// `max_i y_iᵀ X⁻¹ y_i <= n (1 + tau)`.
fn khachiyan(n: usize, ys: &[DVector<f64>], tau: f64, max_iter: usize) -> (Vec<f64>, usize, bool) {
    let k = ys.len();
    let mut w = vec![1.0 / k as f64; k];
    let nf = n as f64;
    let build = |w: &[f64]| {
        let mut x = DMatrix::zeros(n, n);
        for (wi, y) in w.iter().zip(ys) {
            if *wi > 0.0 {
                x += *wi * y * y.transpose();
            }
        }
        x
    };
    let invert = |x: &DMatrix<f64>| x.clone().try_inverse().unwrap_or_else(|| linalg::sym_pow(x, -1.0));
    let mut xinv = invert(&build(&w));
    let mut g: Vec<f64> = ys.iter().map(|y| y.dot(&(&xinv * y))).collect();
    for it in 0..max_iter {
        if it % 64 == 63 {
            xinv = invert(&build(&w));
            g = ys.iter().map(|y| y.dot(&(&xinv * y))).collect();
        }
        let (jp, gp) = g.iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        if gp <= nf * (1.0 + tau) {
            return (w, it, true);
        }
        let (jm, gm) = g
            .iter()
            .enumerate()
            .filter(|(i, _)| w[*i] > 0.0)
            .fold((jp, f64::MAX), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
        let up = gp / nf - 1.0;
        let down = 1.0 - gm / nf;
        let (j, alpha) = if up >= down || w[jm] >= 1.0 {
            (jp, (gp - nf) / (nf * (gp - 1.0)))
        } else {
            let cap = w[jm] / (1.0 - w[jm]);
            let beta = if gm <= 1.0 { cap } else { ((nf - gm) / (nf * (gm - 1.0))).min(cap) };
            (jm, -beta)
        };
        if alpha == 0.0 {
            return (w, it, false);
        }
        // X <- (1 - alpha) X + alpha y yᵀ, inverse by Sherman-Morrison.
        let y = &ys[j];
        let xy = &xinv * y;
        let gj = g[j];
        let c = alpha / (1.0 - alpha);
        let denom = 1.0 + c * gj;
        xinv = (&xinv - (c / denom) * &xy * xy.transpose()) / (1.0 - alpha);
        for (i, wi) in w.iter_mut().enumerate() {
            *wi *= 1.0 - alpha;
            if i == j {
                *wi += alpha;
            }
        }
        if w[j] < 1e-300 {
            w[j] = 0.0;
        }
        for (i, yi) in ys.iter().enumerate() {
            let t = yi.dot(&xy);
            g[i] = (g[i] - (c / denom) * t * t) / (1.0 - alpha);
        }
    }
    (w, max_iter, false)
}

/// Convex combination with at most `n + 1` terms reproducing `target`.
pub fn caratheodory_decompose(points: &[Vec<f64>], target: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = target.len();
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    if let Some(p) = points.iter().find(|p| p.len() != n) {
        return Err(Error::Dimension { expected: n, got: p.len() });
    }
    let k = points.len();
    let lifted = DMatrix::from_fn(n + 1, k, |r, c| if r < n { points[c][r] } else { 1.0 });
    let mut rhs = DVector::zeros(n + 1);
    rhs.as_mut_slice()[..n].copy_from_slice(target);
    rhs[n] = 1.0;
    let (theta, res) = nnls(&lifted, &rhs);
    let scale = points.iter().fold(norm(target), |m, p| m.max(norm(p))).max(1.0);
    if res > 1e-10 * scale {
        let r = &rhs - &lifted * &theta;
        let dir: Vec<f64> = r.as_slice()[..n].to_vec();
        return Err(Error::OutsideHull { direction: dir, gap: res });
    }
    let mut active: Vec<usize> = (0..k).filter(|&i| theta[i] > 0.0).collect();
    let mut th: Vec<f64> = theta.iter().copied().collect();
    while active.len() > n + 1 {
        let sub = lifted.select_columns(active.iter());
        let ns = null_space(&sub, 1e-10);
        let Some(c) = ns.first() else { break };
        let c = if c.iter().any(|&x| x > 0.0) { c.clone() } else { -c.clone() };
        let mut t = f64::INFINITY;
        for (pos, &i) in active.iter().enumerate() {
            if c[pos] > 0.0 {
                t = t.min(th[i] / c[pos]);
            }
        }
        for (pos, &i) in active.iter().enumerate() {
            th[i] -= t * c[pos];
        }
        let drop = active
            .iter()
            .enumerate()
            .filter(|(pos, _)| c[*pos] > 0.0)
            .min_by(|a, b| th[*a.1].total_cmp(&th[*b.1]))
            .map(|(_, &i)| i);
        active.retain(|&i| th[i] > 1e-15 && Some(i) != drop);
    }
    // Polish the weights on the final support.
    let sub = lifted.select_columns(active.iter());
    let (w, _) = nnls(&sub, &rhs);
    Ok(active
        .iter()
        .enumerate()
        .filter(|(pos, _)| w[*pos] > 0.0)
        .map(|(pos, &i)| (w[pos], points[i].clone()))
        .collect())
}

/// Piecewise-constant body-valued map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyField {
    pub grid: CellGrid,
    pub dim: usize,
    pub bodies: Vec<Body>,
}

impl BodyField {
    pub fn new(grid: CellGrid, bodies: Vec<Body>) -> Result<Self> {
        if bodies.len() != grid.n_cells() {
            return Err(Error::Dimension { expected: grid.n_cells(), got: bodies.len() });
        }
        let dim = bodies.first().map_or(0, |b| b.dim());
        if let Some(b) = bodies.iter().find(|b| b.dim() != dim) {
            return Err(Error::Dimension { expected: dim, got: b.dim() });
        }
        Ok(BodyField { grid, dim, bodies })
    }

    /// `x ↦ conv{±f(x)}`.
    pub fn from_vectors(f: &VectorField) -> Self {
        let bodies = (0..f.grid.n_cells()).map(|c| Body::segment(f.get(c))).collect();
        BodyField { grid: f.grid, dim: f.dim, bodies }
    }
}

/// `⟨F⟩_Q`: the Minkowski average of the cell bodies of `Q`.
pub fn aumann_average(f: &BodyField, q: &crate::geometry::Cube) -> Result<Body> {
    let cells = f.grid.cells_of(q)?;
    let first = &f.bodies[cells[0]];
    if cells.iter().all(|&c| &f.bodies[c] == first) {
        return Ok(first.clone());
    }
    let w = 1.0 / cells.len() as f64;
    if cells.iter().all(|&c| matches!(f.bodies[c], Body::Hull { ref points, .. } if points.len() <= 1)) {
        let generators = cells
            .iter()
            .filter_map(|&c| match &f.bodies[c] {
                Body::Hull { points, .. } => points.first().map(|p| p.iter().map(|x| x * w).collect()),
                _ => None,
            })
            .collect();
        return Body::zonotope(f.dim, generators);
    }
    Body::sum(cells.iter().map(|&c| Body::Scaled { c: w, body: Box::new(f.bodies[c].clone()) }).collect())
}

/// `⟨𝒦(f)⟩` over the given cells: the zonotope of averaged segments.
pub fn segment_average(f: &VectorField, cells: &[usize]) -> Body {
    let w = 1.0 / cells.len() as f64;
    let generators = cells
        .iter()
        .map(|&c| f.get(c))
        .filter(|v| v.iter().any(|&x| x != 0.0))
        .map(|v| v.iter().map(|x| x * w).collect())
        .collect();
    Body::Zonotope { dim: f.dim, generators }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diamond_john() {
        let b = Body::hull(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let j = john_ellipsoid(&b).unwrap();
        let want = DMatrix::identity(2, 2) / 2f64.sqrt();
        assert!((&j.a - want).amax() < 1e-5);
        assert!(j.c_out <= 2f64.sqrt() * (1.0 + 1e-6));
    }

    #[test]
    fn flat_body_flags_null_direction() {
        let b = Body::hull(vec![vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let j = john_ellipsoid(&b).unwrap();
        assert_eq!(j.rank, 1);
        assert_eq!(j.null_directions.len(), 1);
    }

    #[test]
    fn hull_membership() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(hull_contains(&pts, &[0.5, 0.5]));
        assert!(!hull_contains(&pts, &[0.6, 0.5]));
    }

    #[test]
    fn two_ellipsoid_tensor_support() {
        let t = TensorBody::new(vec![Body::ball(2), Body::ball(2)]).unwrap();
        let v = [1.0, 0.0, 0.0, 1.0];
        assert!((t.support(&v) - 1.0).abs() < 1e-12);
        let alt = t.alternating(&v).0;
        assert!((alt - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zonotope_vertices_reproduce_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in 1..=3 {
            for count in [1, 2, 5, 9] {
                let gens: Vec<Vec<f64>> =
                    (0..count).map(|_| (0..dim).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
                let z = Body::Zonotope { dim, generators: gens.clone() };
                let h = z.to_hull().unwrap();
                for v in full_sphere_net(dim, 40, 9) {
                    let (a, b) = (z.support(v.as_slice()), h.support(v.as_slice()));
                    assert!((a - b).abs() <= 1e-12 * a.max(1.0), "dim {dim} count {count}: {a} vs {b}");
                }
            }
        }
        let flat = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]];
        let h = Body::Zonotope { dim: 3, generators: flat.clone() }.to_hull().unwrap();
        assert!((h.support(&[1.0, 1.0, 0.0]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn radial_functions() {
        assert!((radial(&Body::ball(2), &[3.0, 4.0]).unwrap() - 0.2).abs() < 1e-14);
        let square = Body::hull(vec![vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let r0 = radial(&square, &[2.0, 0.0]).unwrap();
        assert!((r0 - 0.5).abs() < 1e-9, "{r0}");
        let r = radial(&square, &[0.3, 0.1]).unwrap();
        assert!(contains(&square, &[0.3 * r, 0.1 * r], 0.0).unwrap());
        assert_eq!(radial(&Body::zero(2), &[1.0, 0.0]).unwrap(), 0.0);
        let flat = Body::ellipsoid(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).unwrap();
        assert_eq!(radial(&flat, &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn enumerated_tensor_support_matches_brute_force() {
        let a = Body::hull(vec![vec![1.0, 0.2], vec![-0.3, 0.8]]).unwrap();
        let b = Body::hull(vec![vec![0.5, -1.0], vec![0.9, 0.4], vec![0.1, 0.1]]).unwrap();
        let c = Body::ball(2);
        let t = TensorBody::new(vec![a.clone(), b.clone(), c]).unwrap();
        let (Body::Hull { points: pa, .. }, Body::Hull { points: pb, .. }) = (&a, &b) else { unreachable!() };
        for v in full_sphere_net(8, 20, 4) {
            let mut want: f64 = 0.0;
            for x in pa {
                for y in pb {
                    let mut w = vec![0.0; 2];
                    for (i, vi) in v.iter().enumerate() {
                        w[i % 2] += vi * x[i / 4] * y[(i / 2) % 2];
                    }
                    want = want.max(norm(&w));
                }
            }
            assert!((t.support(v.as_slice()) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn polygon_radial_matches_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let pts: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]).collect();
            let u = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let exact = polygon_radial(&pts, &u).unwrap();
            let hi = pts.iter().fold(0.0f64, |m, p| m.max(norm(p))) / norm(&u);
            let bis = bisect_radial(&u, hi, |v| hull_contains(&pts, v));
            assert!((exact - bis).abs() <= 1e-8 * exact, "{exact} {bis}");
        }
    }
}
