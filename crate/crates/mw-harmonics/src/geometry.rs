//! Exact cube arithmetic, shifted dyadic grids and sparse families.
//!
//! Coordinates are rationals with `i128` parts. Dyadic values serialize as
//! `[mantissa, exp]` (meaning `mantissa * 2^exp`); values carrying a third
//! from a grid shift serialize as `[mantissa, exp, odd]`
//! (`mantissa * 2^exp / odd`).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Coord = Ratio<i128>;

/// `m * 2^e`.
pub fn dyadic(m: i128, e: i32) -> Coord {
    Coord::from_integer(m) * pow2(e)
}

pub fn pow2(e: i32) -> Coord {
    assert!(e.abs() < 126, "binary exponent out of range");
    if e >= 0 {
        Coord::from_integer(1i128 << e)
    } else {
        Coord::new(1, 1i128 << (-e))
    }
}

pub fn to_f64(c: &Coord) -> f64 {
    c.numer().to_f64().unwrap() / c.denom().to_f64().unwrap()
}

/// Exact conversion of a finite double.
pub fn coord_from_f64(x: f64) -> Result<Coord> {
    if !x.is_finite() {
        return Err(Error::Invalid(format!("non-finite coordinate {x}")));
    }
    if x == 0.0 {
        return Ok(Coord::zero());
    }
    let (mant, exp, sign) = num_traits::Float::integer_decode(x);
    let mut m = mant as i128;
    let mut e = exp as i32;
    while m % 2 == 0 {
        m /= 2;
        e += 1;
    }
    if e.abs() >= 126 {
        return Err(Error::Invalid(format!("coordinate {x} outside the exact range")));
    }
    Ok(dyadic(sign as i128 * m, e))
}

fn two_adic(n: i128) -> (i128, i32) {
    let mut n = n;
    let mut e = 0;
    while n != 0 && n % 2 == 0 {
        n /= 2;
        e += 1;
    }
    (n, e)
}

fn log2_exact(n: i128) -> Option<i32> {
    if n > 0 && n & (n - 1) == 0 {
        Some(n.trailing_zeros() as i32)
    } else {
        None
    }
}

/// Binary exponent `k` with `c = 2^k`, if `c` is a power of two.
pub fn power_of_two_exponent(c: &Coord) -> Option<i32> {
    let a = log2_exact(*c.numer())?;
    let b = log2_exact(*c.denom())?;
    Some(a - b)
}

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct CoordRepr(Vec<i128>);

impl From<&Coord> for CoordRepr {
    fn from(c: &Coord) -> Self {
        let (num, a) = two_adic(*c.numer());
        let (odd, b) = two_adic(*c.denom());
        let e = (a - b) as i128;
        if odd == 1 {
            CoordRepr(vec![num, e])
        } else {
            CoordRepr(vec![num, e, odd])
        }
    }
}

impl TryFrom<CoordRepr> for Coord {
    type Error = String;
    fn try_from(r: CoordRepr) -> std::result::Result<Self, String> {
        match r.0.as_slice() {
            [m, e] => Ok(dyadic(*m, *e as i32)),
            [m, e, odd] if *odd > 0 => Ok(dyadic(*m, *e as i32) / Coord::from_integer(*odd)),
            _ => Err("coordinate must be [mantissa, exp] or [mantissa, exp, odd]".into()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CubeRepr {
    corner: Vec<CoordRepr>,
    side: CoordRepr,
}

/// Half-open axis-parallel cube `corner + [0, side)^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cube {
    corner: Vec<Coord>,
    side: Coord,
}

impl Serialize for Cube {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CubeRepr {
            corner: self.corner.iter().map(CoordRepr::from).collect(),
            side: CoordRepr::from(&self.side),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Cube {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = CubeRepr::deserialize(d)?;
        let corner = r
            .corner
            .into_iter()
            .map(Coord::try_from)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        let side = Coord::try_from(r.side).map_err(serde::de::Error::custom)?;
        Cube::new(corner, side).map_err(serde::de::Error::custom)
    }
}

impl Cube {
    pub fn new(corner: Vec<Coord>, side: Coord) -> Result<Self> {
        if side <= Coord::zero() {
            return Err(Error::Invalid("cube side must be positive".into()));
        }
        if corner.is_empty() {
            return Err(Error::Invalid("cube dimension must be positive".into()));
        }
        Ok(Cube { corner, side })
    }

    pub fn unit(d: usize) -> Self {
        Cube { corner: vec![Coord::zero(); d], side: Coord::one() }
    }

    pub fn from_f64(corner: &[f64], side: f64) -> Result<Self> {
        let c = corner.iter().map(|&x| coord_from_f64(x)).collect::<Result<Vec<_>>>()?;
        Cube::new(c, coord_from_f64(side)?)
    }

    /// Dyadic cube `2^e * (m + [0,1)^d)`.
    pub fn dyadic(m: &[i128], e: i32) -> Self {
        let s = pow2(e);
        Cube { corner: m.iter().map(|&k| Coord::from_integer(k) * s).collect(), side: s }
    }

    pub fn dim(&self) -> usize {
        self.corner.len()
    }

    pub fn corner(&self) -> &[Coord] {
        &self.corner
    }

    pub fn side(&self) -> &Coord {
        &self.side
    }

    pub fn side_f64(&self) -> f64 {
        to_f64(&self.side)
    }

    pub fn volume(&self) -> Coord {
        let mut v = Coord::one();
        for _ in 0..self.dim() {
            v *= self.side;
        }
        v
    }

    pub fn volume_f64(&self) -> f64 {
        to_f64(&self.volume())
    }

    pub fn center(&self) -> Vec<Coord> {
        let h = self.side / Coord::from_integer(2);
        self.corner.iter().map(|c| c + h).collect()
    }

    pub fn center_f64(&self) -> Vec<f64> {
        self.center().iter().map(to_f64).collect()
    }

    /// Same center, side multiplied by `lambda`.
    pub fn dilate(&self, lambda: &Coord) -> Result<Cube> {
        let shift = (Coord::one() - lambda) * self.side / Coord::from_integer(2);
        Cube::new(self.corner.iter().map(|c| c + shift).collect(), self.side * lambda)
    }

    pub fn triple(&self) -> Cube {
        self.dilate(&Coord::from_integer(3)).expect("positive dilation")
    }

    pub fn translate(&self, axis: usize, amount: &Coord) -> Cube {
        let mut c = self.clone();
        c.corner[axis] += amount;
        c
    }

    pub fn contains(&self, other: &Cube) -> bool {
        self.dim() == other.dim()
            && self.corner.iter().zip(&other.corner).all(|(a, b)| {
                a <= b && b + other.side <= a + self.side
            })
    }

    pub fn strictly_contains(&self, other: &Cube) -> bool {
        self.contains(other) && self != other
    }

    pub fn contains_point(&self, x: &[Coord]) -> bool {
        x.len() == self.dim()
            && self.corner.iter().zip(x).all(|(a, xi)| a <= xi && *xi < a + self.side)
    }

    pub fn intersects(&self, other: &Cube) -> bool {
        self.corner.iter().zip(&other.corner).all(|(a, b)| {
            *a < b + other.side && *b < a + self.side
        })
    }

    /// The `2^d` halves; bit `i` of the child index selects the upper half on axis `i`.
    pub fn children(&self) -> Vec<Cube> {
        let d = self.dim();
        let h = self.side / Coord::from_integer(2);
        (0..1usize << d)
            .map(|c| Cube {
                corner: (0..d)
                    .map(|i| if c >> i & 1 == 1 { self.corner[i] + h } else { self.corner[i] })
                    .collect(),
                side: h,
            })
            .collect()
    }
}

/// One of the `3^d` shifted dyadic grids. Axis `i` is shifted by `shift[i] / 3`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DyadicGrid {
    shift: Vec<i8>,
}

fn parity_sign(k: i32) -> i128 {
    if k.rem_euclid(2) == 0 {
        1
    } else {
        -1
    }
}

impl DyadicGrid {
    pub fn standard(d: usize) -> Self {
        DyadicGrid { shift: vec![0; d] }
    }

    pub fn new(shift: Vec<i8>) -> Result<Self> {
        if shift.is_empty() || shift.iter().any(|s| !(-1..=1).contains(s)) {
            return Err(Error::Invalid("grid shifts must lie in {-1, 0, 1} (thirds)".into()));
        }
        Ok(DyadicGrid { shift })
    }

    pub fn from_id(d: usize, id: usize) -> Result<Self> {
        if id >= 3usize.pow(d as u32) {
            return Err(Error::Invalid(format!("grid id {id} out of range for d = {d}")));
        }
        let mut r = id;
        let shift = (0..d)
            .map(|_| {
                let s = (r % 3) as i8 - 1;
                r /= 3;
                s
            })
            .collect();
        Ok(DyadicGrid { shift })
    }

    pub fn all(d: usize) -> Vec<DyadicGrid> {
        (0..3usize.pow(d as u32)).map(|id| Self::from_id(d, id).unwrap()).collect()
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn id(&self) -> usize {
        self.shift.iter().rev().fold(0, |acc, &s| acc * 3 + (s + 1) as usize)
    }

    fn offset(&self, i: usize, k: i32) -> Coord {
        Coord::new(parity_sign(k) * self.shift[i] as i128, 3)
    }

    /// Level-`k` cube `2^{-k}([0,1)^d + m + (-1)^k shift/3)`.
    pub fn cube(&self, k: i32, m: &[i128]) -> Cube {
        let s = pow2(-k);
        Cube {
            corner: m
                .iter()
                .enumerate()
                .map(|(i, &mi)| (Coord::from_integer(mi) + self.offset(i, k)) * s)
                .collect(),
            side: s,
        }
    }

    /// Index of the level-`k` cube containing the point.
    pub fn locate(&self, k: i32, x: &[Coord]) -> Vec<i128> {
        let s = pow2(k);
        x.iter()
            .enumerate()
            .map(|(i, xi)| (xi * s - self.offset(i, k)).floor().to_integer())
            .collect()
    }

    /// `(level, index)` if the cube belongs to this grid.
    pub fn level_of(&self, q: &Cube) -> Option<(i32, Vec<i128>)> {
        if q.dim() != self.dim() {
            return None;
        }
        let k = -power_of_two_exponent(q.side())?;
        let s = pow2(k);
        let mut m = Vec::with_capacity(q.dim());
        for (i, c) in q.corner().iter().enumerate() {
            let v = c * s - self.offset(i, k);
            if !v.is_integer() {
                return None;
            }
            m.push(v.to_integer());
        }
        Some((k, m))
    }

    pub fn contains_cube(&self, q: &Cube) -> bool {
        self.level_of(q).is_some()
    }

    /// Grid id of the (unique) shifted grid containing `q`.
    pub fn grid_of(q: &Cube) -> Option<usize> {
        DyadicGrid::all(q.dim()).into_iter().find(|g| g.contains_cube(q)).map(|g| g.id())
    }

    pub fn parent(&self, q: &Cube) -> Option<Cube> {
        let (k, _) = self.level_of(q)?;
        let m = self.locate(k - 1, q.corner());
        Some(self.cube(k - 1, &m))
    }
}

/// Smallest cube of the `3^d` shifted grids containing `q`; returns `(grid id, R)`.
pub fn cover_dyadic(q: &Cube) -> (usize, Cube) {
    let d = q.dim();
    let l = q.side_f64();
    let k_hi = (-l.log2()).floor() as i32 + 1;
    let mut k_lo = (-(6.0 * l).log2()).ceil() as i32 - 1;
    let grids = DyadicGrid::all(d);
    loop {
        for k in (k_lo..=k_hi).rev() {
            if pow2(-k) < *q.side() {
                continue;
            }
            for g in &grids {
                let r = g.cube(k, &g.locate(k, q.corner()));
                if r.contains(q) {
                    return (g.id(), r);
                }
            }
        }
        k_lo -= 1;
    }
}

/// Half-open lattice of cells `origin + h * (index + [0,1)^d)` used to represent witnesses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellLattice {
    pub origin: Vec<CoordValue>,
    pub cell_side: CoordValue,
}

/// Serializable wrapper around an exact coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CoordRepr", into = "CoordRepr")]
pub struct CoordValue(pub Coord);

impl TryFrom<CoordRepr> for CoordValue {
    type Error = String;
    fn try_from(r: CoordRepr) -> std::result::Result<Self, String> {
        Coord::try_from(r).map(CoordValue)
    }
}

impl From<CoordValue> for CoordRepr {
    fn from(c: CoordValue) -> Self {
        CoordRepr::from(&c.0)
    }
}

/// Portion `fraction` of cell `cell` belongs to the witness set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessPiece {
    pub cell: Vec<i64>,
    pub fraction: CoordValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub lattice: CellLattice,
    pub sets: Vec<Vec<WitnessPiece>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseFamily {
    pub cubes: Vec<Cube>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl SparseFamily {
    pub fn new(cubes: Vec<Cube>) -> Self {
        SparseFamily { cubes, witness: None }
    }
}

#[derive(Clone, Debug)]
pub struct SparsenessCheck {
    pub sparse: bool,
    pub laminar: bool,
    pub witness: Option<Witness>,
}

struct Frame {
    origin: Vec<Coord>,
    h: Coord,
}

impl Frame {
    fn detect(cubes: &[Cube]) -> Result<Frame> {
        let d = cubes[0].dim();
        if cubes.iter().any(|q| q.dim() != d) {
            return Err(Error::Resolution("cubes of different dimensions".into()));
        }
        let origin = cubes[0].corner().to_vec();
        let mut r = i32::MIN;
        let mut probe = |v: &Coord| -> Result<()> {
            if v.is_zero() {
                return Ok(());
            }
            let den = log2_exact(*v.denom()).ok_or_else(|| {
                Error::Resolution(format!("value {v} is not on a common dyadic lattice"))
            })?;
            let (_, tz) = two_adic(*v.numer());
            r = r.max(den - tz);
            Ok(())
        };
        for q in cubes {
            probe(q.side())?;
            for (c, o) in q.corner().iter().zip(&origin) {
                probe(&(c - o))?;
            }
        }
        let h = pow2(-r);
        let total: f64 = cubes.iter().map(|q| to_f64(&(q.side() / h)).powi(d as i32)).sum();
        if total > 4.0e6 {
            return Err(Error::Resolution(format!(
                "common resolution too fine ({total:.0} cells)"
            )));
        }
        Ok(Frame { origin, h })
    }

    fn cells(&self, q: &Cube) -> Vec<Vec<i64>> {
        let d = q.dim();
        let lo: Vec<i64> = q
            .corner()
            .iter()
            .zip(&self.origin)
            .map(|(c, o)| ((c - o) / self.h).to_integer() as i64)
            .collect();
        let n = (q.side() / self.h).to_integer() as i64;
        let count = (n as usize).pow(d as u32);
        (0..count)
            .map(|mut idx| {
                (0..d)
                    .map(|i| {
                        let v = lo[i] + (idx % n as usize) as i64;
                        idx /= n as usize;
                        v
                    })
                    .collect()
            })
            .collect()
    }

    fn cell_count(&self, q: &Cube) -> i128 {
        (q.side() / self.h).to_integer().pow(q.dim() as u32)
    }

    fn lattice(&self) -> CellLattice {
        CellLattice {
            origin: self.origin.iter().map(|c| CoordValue(*c)).collect(),
            cell_side: CoordValue(self.h),
        }
    }
}

fn is_laminar(cubes: &[Cube]) -> bool {
    for i in 0..cubes.len() {
        for j in i + 1..cubes.len() {
            let (a, b) = (&cubes[i], &cubes[j]);
            if a.intersects(b) && !a.contains(b) && !b.contains(a) {
                return false;
            }
        }
    }
    true
}

/// Decides `eta`-sparseness exactly (measures in units of cells of a common lattice) and
/// returns a witness when one exists. Witness sets may split cells fractionally.
pub fn is_eta_sparse(family: &SparseFamily, eta: &Coord) -> Result<SparsenessCheck> {
    if *eta <= Coord::zero() || *eta >= Coord::one() {
        return Err(Error::Invalid("eta must lie in (0, 1)".into()));
    }
    let cubes = &family.cubes;
    if cubes.is_empty() {
        return Ok(SparsenessCheck { sparse: true, laminar: true, witness: None });
    }
    let frame = Frame::detect(cubes)?;
    let laminar = is_laminar(cubes);
    let mut order: Vec<usize> = (0..cubes.len()).collect();
    order.sort_by(|&a, &b| cubes[a].volume().cmp(&cubes[b].volume()).then(a.cmp(&b)));

    // Smallest cubes first; for laminar families this greedy is exact.
    let mut free: HashMap<Vec<i64>, Coord> = HashMap::new();
    let mut sets: Vec<Vec<WitnessPiece>> = vec![Vec::new(); cubes.len()];
    let mut greedy_ok = true;
    for &i in &order {
        let mut need = eta * Coord::from_integer(frame.cell_count(&cubes[i]));
        for cell in frame.cells(&cubes[i]) {
            if need.is_zero() {
                break;
            }
            let slot = free.entry(cell.clone()).or_insert_with(Coord::one);
            if slot.is_zero() {
                continue;
            }
            let take = if *slot < need { *slot } else { need };
            *slot -= take;
            need -= take;
            sets[i].push(WitnessPiece { cell, fraction: CoordValue(take) });
        }
        if !need.is_zero() {
            greedy_ok = false;
            break;
        }
    }
    if greedy_ok {
        return Ok(SparsenessCheck {
            sparse: true,
            laminar,
            witness: Some(Witness { lattice: frame.lattice(), sets }),
        });
    }
    if laminar {
        return Ok(SparsenessCheck { sparse: false, laminar, witness: None });
    }
    flow_witness(cubes, &frame, eta)
}

fn flow_witness(cubes: &[Cube], frame: &Frame, eta: &Coord) -> Result<SparsenessCheck> {
    use petgraph::algo::ford_fulkerson;
    use petgraph::graph::DiGraph;

    // Atoms: cells grouped by the set of cubes containing them.
    let mut atoms: BTreeMap<Vec<usize>, Vec<Vec<i64>>> = BTreeMap::new();
    let mut membership: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for (i, q) in cubes.iter().enumerate() {
        for cell in frame.cells(q) {
            membership.entry(cell).or_default().push(i);
        }
    }
    for (cell, owners) in membership {
        atoms.entry(owners).or_default().push(cell);
    }
    let (a, b) = (*eta.numer(), *eta.denom());
    let to_u64 = |v: i128| -> Result<u64> {
        u64::try_from(v).map_err(|_| Error::Resolution("flow capacities overflow".into()))
    };
    let mut g: DiGraph<(), u64> = DiGraph::new();
    let src = g.add_node(());
    let dst = g.add_node(());
    let cube_nodes: Vec<_> = cubes.iter().map(|_| g.add_node(())).collect();
    let mut demand_total = 0u64;
    for (i, q) in cubes.iter().enumerate() {
        let dem = to_u64(a * frame.cell_count(q))?;
        demand_total += dem;
        g.add_edge(src, cube_nodes[i], dem);
    }
    let atom_list: Vec<(Vec<usize>, Vec<Vec<i64>>)> = atoms.into_iter().collect();
    let mut cube_atom_edges = Vec::new();
    for (owners, cells) in &atom_list {
        let node = g.add_node(());
        let cap = to_u64(b * cells.len() as i128)?;
        g.add_edge(node, dst, cap);
        for &i in owners {
            let e = g.add_edge(cube_nodes[i], node, cap);
            cube_atom_edges.push((i, cube_atom_edges.len(), e));
        }
    }
    let (value, flows) = ford_fulkerson(&g, src, dst);
    if value < demand_total {
        return Ok(SparsenessCheck { sparse: false, laminar: false, witness: None });
    }
    // Distribute each cube's flow into the atom's cells.
    let mut sets: Vec<Vec<WitnessPiece>> = vec![Vec::new(); cubes.len()];
    let mut edge_iter = cube_atom_edges.iter();
    for (owners, cells) in &atom_list {
        let mut cursor = 0usize;
        let mut used_in_cell = Coord::zero();
        for _ in owners {
            let &(i, _, e) = edge_iter.next().unwrap();
            let mut units = Coord::new(flows[e.index()] as i128, b);
            while units > Coord::zero() {
                let room = Coord::one() - used_in_cell;
                let take = if room < units { room } else { units };
                sets[i].push(WitnessPiece {
                    cell: cells[cursor].clone(),
                    fraction: CoordValue(take),
                });
                units -= take;
                used_in_cell += take;
                if used_in_cell == Coord::one() {
                    cursor += 1;
                    used_in_cell = Coord::zero();
                }
            }
        }
    }
    Ok(SparsenessCheck {
        sparse: true,
        laminar: false,
        witness: Some(Witness { lattice: frame.lattice(), sets }),
    })
}

/// Checks that a witness is valid for `eta`: pieces inside their cubes, cells not
/// over-used, and `|E_Q| >= eta |Q|`.
pub fn verify_witness(family: &SparseFamily, witness: &Witness, eta: &Coord) -> bool {
    if witness.sets.len() != family.cubes.len() {
        return false;
    }
    let h = witness.lattice.cell_side.0;
    let origin: Vec<Coord> = witness.lattice.origin.iter().map(|c| c.0).collect();
    let hd = |d: usize| (0..d).fold(Coord::one(), |acc, _| acc * h);
    let mut usage: HashMap<&[i64], Coord> = HashMap::new();
    for (q, set) in family.cubes.iter().zip(&witness.sets) {
        let mut measure = Coord::zero();
        for piece in set {
            let f = piece.fraction.0;
            if f < Coord::zero() || piece.cell.len() != q.dim() {
                return false;
            }
            let cell_cube = Cube {
                corner: piece
                    .cell
                    .iter()
                    .zip(&origin)
                    .map(|(&c, o)| o + Coord::from_integer(c as i128) * h)
                    .collect(),
                side: h,
            };
            if !q.contains(&cell_cube) {
                return false;
            }
            *usage.entry(piece.cell.as_slice()).or_insert_with(Coord::zero) += f;
            measure += f * hd(q.dim());
        }
        if measure < eta * q.volume() {
            return false;
        }
    }
    usage.values().all(|u| *u <= Coord::one())
}

/// Family tree over the distinct cubes: `children[i]` are the maximal cubes strictly
/// inside cube `i` (cubes are assumed nested-or-disjoint).
pub struct FamilyTree {
    pub cubes: Vec<Cube>,
    pub children: Vec<Vec<usize>>,
    pub roots: Vec<usize>,
}

impl FamilyTree {
    pub fn build(cubes: &[Cube]) -> FamilyTree {
        let set: BTreeSet<&Cube> = cubes.iter().collect();
        let mut list: Vec<Cube> = set.into_iter().cloned().collect();
        list.sort_by(|a, b| b.volume().cmp(&a.volume()).then(a.cmp(b)));
        let mut children = vec![Vec::new(); list.len()];
        let mut roots = Vec::new();
        // Sorted by decreasing volume, so the first strict container found scanning
        // backwards is a smallest one.
        for i in 0..list.len() {
            let parent = (0..i).rev().find(|&j| list[j].strictly_contains(&list[i]));
            match parent {
                Some(p) => children[p].push(i),
                None => roots.push(i),
            }
        }
        FamilyTree { cubes: list, children, roots }
    }
}

/// Checks `sum_{R in ch(Q)} |R| <= eps |Q|` for every cube; all cubes must lie in one grid.
pub fn is_martingale_sparse(family: &SparseFamily, eps: &Coord) -> Result<bool> {
    if family.cubes.is_empty() {
        return Ok(true);
    }
    common_grid(&family.cubes)?;
    let tree = FamilyTree::build(&family.cubes);
    for (i, q) in tree.cubes.iter().enumerate() {
        let total = tree.children[i]
            .iter()
            .fold(Coord::zero(), |acc, &c| acc + tree.cubes[c].volume());
        if total > eps * q.volume() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Grid id shared by all cubes, or an error.
pub fn common_grid(cubes: &[Cube]) -> Result<usize> {
    let mut id = None;
    for q in cubes {
        let g = DyadicGrid::grid_of(q).ok_or(Error::MixedGrids)?;
        match id {
            None => id = Some(g),
            Some(prev) if prev != g => return Err(Error::MixedGrids),
            _ => {}
        }
    }
    id.ok_or(Error::Empty("cube family"))
}

/// Canonical witness `E_Q = Q \ union of ch(Q)` for a family inside one dyadic grid.
/// Duplicates share one witness; the returned family lists each distinct cube once.
pub fn martingale_witness(family: &SparseFamily) -> Result<SparseFamily> {
    common_grid(&family.cubes)?;
    let tree = FamilyTree::build(&family.cubes);
    let frame = Frame::detect(&tree.cubes)?;
    let mut sets = Vec::with_capacity(tree.cubes.len());
    for (i, q) in tree.cubes.iter().enumerate() {
        let covered: Vec<&Cube> = tree.children[i].iter().map(|&c| &tree.cubes[c]).collect();
        let set = frame
            .cells(q)
            .into_iter()
            .filter(|cell| {
                let pt: Vec<Coord> = cell
                    .iter()
                    .zip(&frame.origin)
                    .map(|(&c, o)| o + Coord::from_integer(c as i128) * frame.h)
                    .collect();
                !covered.iter().any(|r| r.contains_point(&pt))
            })
            .map(|cell| WitnessPiece { cell, fraction: CoordValue(Coord::one()) })
            .collect();
        sets.push(set);
    }
    Ok(SparseFamily {
        cubes: tree.cubes,
        witness: Some(Witness { lattice: frame.lattice(), sets }),
    })
}

/// Maximal elements of a nested-or-disjoint family (distinct cubes).
pub fn maximal_cubes(cubes: &[Cube]) -> Vec<Cube> {
    let tree = FamilyTree::build(cubes);
    tree.roots.iter().map(|&r| tree.cubes[r].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(m: i128, e: i32) -> Coord {
        dyadic(m, e)
    }

    #[test]
    fn triple_keeps_center() {
        let q = Cube::new(vec![c(1, -1)], c(1, -2)).unwrap();
        let t = q.triple();
        assert_eq!(t.center(), q.center());
        assert_eq!(*t.side(), c(3, -2));
    }

    #[test]
    fn shifted_grid_is_nested() {
        let g = DyadicGrid::new(vec![1]).unwrap();
        for k in -2..4 {
            for m in -5..5 {
                let q = g.cube(k, &[m]);
                let p = g.parent(&q).unwrap();
                assert!(p.contains(&q), "k={k} m={m}");
                assert_eq!(g.level_of(&q), Some((k, vec![m])));
            }
        }
    }

    #[test]
    fn json_roundtrip_with_thirds() {
        let g = DyadicGrid::new(vec![-1, 1]).unwrap();
        let q = g.cube(3, &[2, -7]);
        let s = serde_json::to_string(&q).unwrap();
        let back: Cube = serde_json::from_str(&s).unwrap();
        assert_eq!(q, back);
    }

    #[test]
    fn exact_float_conversion() {
        assert_eq!(coord_from_f64(0.375).unwrap(), c(3, -3));
        assert_eq!(coord_from_f64(-6.0).unwrap(), c(-3, 1));
    }
}
