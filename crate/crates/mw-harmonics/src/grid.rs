//! Uniform cell grids on `[0, 2^s)^d` and piecewise-constant fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pow2, Coord, Cube};

/// Domain `[0, 2^side_log2)^d` split into `2^level` cells per axis.
/// Cells are indexed row-major (last axis fastest).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellGrid {
    pub d: usize,
    pub side_log2: i32,
    pub level: u32,
}

/// Cells of a grid-aligned cube: lower multi-index and cells per axis.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CellBlock {
    pub lo: Vec<usize>,
    pub len: usize,
}

impl CellBlock {
    pub fn count(&self) -> usize {
        self.len.pow(self.lo.len() as u32)
    }
}

impl CellGrid {
    pub fn new(d: usize, side_log2: i32, level: u32) -> Result<Self> {
        if d == 0 || d > 3 {
            return Err(Error::Invalid(format!("unsupported dimension {d}")));
        }
        if (level as usize) * d > 24 {
            return Err(Error::Invalid("grid too fine".into()));
        }
        Ok(CellGrid { d, side_log2, level })
    }

    /// `[0,1)^d` with `2^level` cells per axis.
    pub fn unit(d: usize, level: u32) -> Self {
        CellGrid::new(d, 0, level).expect("valid unit grid")
    }

    pub fn per_axis(&self) -> usize {
        1usize << self.level
    }

    pub fn n_cells(&self) -> usize {
        self.per_axis().pow(self.d as u32)
    }

    pub fn cell_side(&self) -> Coord {
        pow2(self.side_log2 - self.level as i32)
    }

    pub fn cell_side_f64(&self) -> f64 {
        2f64.powi(self.side_log2 - self.level as i32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_side_f64().powi(self.d as i32)
    }

    pub fn domain(&self) -> Cube {
        Cube::new(vec![Coord::from_integer(0); self.d], pow2(self.side_log2)).unwrap()
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &m| acc * self.per_axis() + m)
    }

    pub fn multi(&self, mut idx: usize) -> Vec<usize> {
        let n = self.per_axis();
        let mut out = vec![0; self.d];
        for i in (0..self.d).rev() {
            out[i] = idx % n;
            idx /= n;
        }
        out
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        let h = self.cell_side_f64();
        self.multi(idx).into_iter().map(|m| (m as f64 + 0.5) * h).collect()
    }

    pub fn cell_cube(&self, idx: usize) -> Cube {
        let h = self.cell_side();
        Cube::new(
            self.multi(idx).into_iter().map(|m| Coord::from_integer(m as i128) * h).collect(),
            h,
        )
        .unwrap()
    }

    pub fn block(&self, q: &Cube) -> Result<CellBlock> {
        if q.dim() != self.d {
            return Err(Error::Dimension { expected: self.d, got: q.dim() });
        }
        let h = self.cell_side();
        let len = q.side() / h;
        if !len.is_integer() {
            return Err(Error::Misaligned(format!("side {} is not a multiple of {}", q.side(), h)));
        }
        let len = len.to_integer() as i64;
        let mut lo = Vec::with_capacity(self.d);
        for c in q.corner() {
            let v = c / h;
            if !v.is_integer() {
                return Err(Error::Misaligned(format!("corner {c} is off the cell lattice")));
            }
            let v = v.to_integer() as i64;
            if v < 0 || v + len > self.per_axis() as i64 {
                return Err(Error::Misaligned(format!("cube {q:?} leaves the domain")));
            }
            lo.push(v as usize);
        }
        Ok(CellBlock { lo, len: len as usize })
    }

    pub fn block_cells(&self, b: &CellBlock) -> Vec<usize> {
        let count = b.count();
        let mut out = Vec::with_capacity(count);
        let mut off = vec![0usize; self.d];
        for _ in 0..count {
            let multi: Vec<usize> = b.lo.iter().zip(&off).map(|(l, o)| l + o).collect();
            out.push(self.index(&multi));
            for i in (0..self.d).rev() {
                off[i] += 1;
                if off[i] < b.len {
                    break;
                }
                off[i] = 0;
            }
        }
        out
    }

    pub fn cells_of(&self, q: &Cube) -> Result<Vec<usize>> {
        Ok(self.block_cells(&self.block(q)?))
    }

    /// Dyadic subcubes of `q` with side `side(q) * 2^{-j}` for `j = 0..=depth`.
    pub fn dyadic_subcubes(&self, q: &Cube, depth: u32) -> Result<Vec<Cube>> {
        self.block(q)?;
        let mut out = vec![q.clone()];
        let mut layer = vec![q.clone()];
        for _ in 0..depth {
            let next: Vec<Cube> = layer.iter().flat_map(|c| c.children()).collect();
            if let Some(c) = next.first() {
                if self.block(c).is_err() {
                    return Err(Error::Resolution("depth below cell resolution".into()));
                }
            }
            out.extend(next.iter().cloned());
            layer = next;
        }
        Ok(out)
    }

    /// All dyadic cubes of the domain down to cell level.
    pub fn dyadic_family(&self) -> Vec<Cube> {
        self.dyadic_subcubes(&self.domain(), self.level).unwrap()
    }

    /// Every grid-aligned cube of side `2^j` cells, at every cell offset.
    pub fn sliding_family(&self) -> Vec<Cube> {
        let n = self.per_axis();
        let h = self.cell_side();
        let mut out = Vec::new();
        for j in 0..=self.level {
            let s = 1usize << j;
            let span = n - s + 1;
            for idx in 0..span.pow(self.d as u32) {
                let mut rest = idx;
                let mut corner = vec![Coord::from_integer(0); self.d];
                for c in corner.iter_mut().rev() {
                    *c = h * Coord::from_integer((rest % span) as i128);
                    rest /= span;
                }
                out.push(Cube::new(corner, h * Coord::from_integer(s as i128)).unwrap());
            }
        }
        out
    }

    /// The cell containing a point, if inside the domain.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let h = self.cell_side_f64();
        let mut multi = Vec::with_capacity(self.d);
        for &xi in x {
            let m = (xi / h).floor();
            if m < 0.0 || m >= self.per_axis() as f64 {
                return None;
            }
            multi.push(m as usize);
        }
        Some(self.index(&multi))
    }

    pub fn same_as(&self, other: &CellGrid) -> Result<()> {
        if self != other {
            return Err(Error::Invalid(format!("grid mismatch: {self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Piecewise-constant scalar field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: CellGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: CellGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::Dimension { expected: grid.n_cells(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite field value".into()));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: CellGrid, c: f64) -> Self {
        ScalarField { grid, values: vec![c; grid.n_cells()] }
    }

    pub fn from_fn(grid: CellGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.n_cells()).map(|i| f(&grid.center(i))).collect();
        ScalarField { grid, values }
    }

    /// Indicator of a grid-aligned cube.
    pub fn indicator(grid: CellGrid, q: &Cube) -> Result<Self> {
        let mut values = vec![0.0; grid.n_cells()];
        for c in grid.cells_of(q)? {
            values[c] = 1.0;
        }
        Ok(ScalarField { grid, values })
    }

    pub fn average(&self, cells: &[usize]) -> f64 {
        cells.iter().map(|&c| self.values[c]).sum::<f64>() / cells.len() as f64
    }

    pub fn abs_average(&self, cells: &[usize]) -> f64 {
        cells.iter().map(|&c| self.values[c].abs()).sum::<f64>() / cells.len() as f64
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn restrict(&self, cells: &[usize]) -> ScalarField {
        let mut values = vec![0.0; self.values.len()];
        for &c in cells {
            values[c] = self.values[c];
        }
        ScalarField { grid: self.grid, values }
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&c| self.values[c] != 0.0).collect()
    }
}

/// Piecewise-constant vector field with values in `R^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    pub grid: CellGrid,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: CellGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() * dim {
            return Err(Error::Dimension { expected: grid.n_cells() * dim, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite field value".into()));
        }
        Ok(VectorField { grid, dim, values })
    }

    pub fn zeros(grid: CellGrid, dim: usize) -> Self {
        VectorField { grid, dim, values: vec![0.0; grid.n_cells() * dim] }
    }

    pub fn from_scalar(f: &ScalarField) -> Self {
        VectorField { grid: f.grid, dim: 1, values: f.values.clone() }
    }

    /// `h(x) * u` for a scalar profile `h` and fixed vector `u`.
    pub fn scaled(h: &ScalarField, u: &[f64]) -> Self {
        let mut values = Vec::with_capacity(h.values.len() * u.len());
        for &v in &h.values {
            values.extend(u.iter().map(|x| x * v));
        }
        VectorField { grid: h.grid, dim: u.len(), values }
    }

    pub fn get(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn get_mut(&mut self, cell: usize) -> &mut [f64] {
        &mut self.values[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn average(&self, cells: &[usize]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for &c in cells {
            for (a, v) in acc.iter_mut().zip(self.get(c)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= cells.len() as f64);
        acc
    }

    pub fn norm_at(&self, cell: usize) -> f64 {
        self.get(cell).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scalar component `<f(x), e>`.
    pub fn component(&self, e: &[f64]) -> ScalarField {
        let values = (0..self.grid.n_cells())
            .map(|c| self.get(c).iter().zip(e).map(|(a, b)| a * b).sum())
            .collect();
        ScalarField { grid: self.grid, values }
    }

    pub fn norms(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: (0..self.grid.n_cells()).map(|c| self.norm_at(c)).collect(),
        }
    }

    pub fn restrict(&self, cells: &[usize]) -> VectorField {
        let mut out = VectorField::zeros(self.grid, self.dim);
        for &c in cells {
            out.get_mut(c).copy_from_slice(self.get(c));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_roundtrip() {
        let g = CellGrid::new(2, 1, 3).unwrap();
        let q = Cube::dyadic(&[1, 2], -1);
        let b = g.block(&q).unwrap();
        assert_eq!(b.len, 2);
        let cells = g.block_cells(&b);
        assert_eq!(cells.len(), 4);
        for c in cells {
            assert!(q.contains(&g.cell_cube(c)));
        }
    }

    #[test]
    fn misaligned_cube_rejected() {
        let g = CellGrid::unit(1, 3);
        let q = Cube::from_f64(&[0.1], 0.25).unwrap();
        assert!(g.block(&q).is_err());
    }

    #[test]
    fn dyadic_family_size() {
        let g = CellGrid::unit(1, 3);
        assert_eq!(g.dyadic_family().len(), 15);
        assert_eq!(CellGrid::unit(1, 3).sliding_family().len(), 8 + 7 + 5 + 1);
    }
}
