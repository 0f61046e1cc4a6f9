//! Tensor products of finite-dimensional spaces with row-major flattening:
//! the multi-index `(k_1, ..., k_m)` maps to `((k_1 n_2 + k_2) n_3 + ...) + k_m`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpace {
    pub dims: Vec<usize>,
}

impl TensorSpace {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&n| n == 0) {
            return Err(Error::Invalid(format!("bad tensor dims {dims:?}")));
        }
        Ok(TensorSpace { dims })
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn factors(&self) -> usize {
        self.dims.len()
    }

    pub fn flatten(&self, k: &[usize]) -> usize {
        k.iter().zip(&self.dims).fold(0, |acc, (&ki, &ni)| acc * ni + ki)
    }

    pub fn unflatten(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (o, &n) in out.iter_mut().zip(&self.dims).rev() {
            *o = idx % n;
            idx /= n;
        }
        out
    }

    /// The basis vector `e_{k_1} ⊗ ... ⊗ e_{k_m}`.
    pub fn basis(&self, k: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        v[self.flatten(k)] = 1.0;
        v
    }
}

/// `u_1 ⊗ ... ⊗ u_m` as a flat vector.
pub fn tensor_vector(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![1.0];
    for p in parts {
        let mut next = Vec::with_capacity(out.len() * p.len());
        for &a in &out {
            for &b in p.iter() {
                next.push(a * b);
            }
        }
        out = next;
    }
    out
}

/// Kronecker product `A_1 ⊗ ... ⊗ A_m`.
pub fn tensor_matrix(parts: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = parts.first().ok_or(Error::Empty("tensor factors"))?;
    for a in parts {
        if !a.is_square() {
            return Err(Error::Invalid(format!("factor is {}x{}, not square", a.nrows(), a.ncols())));
        }
    }
    let mut out = (*first).clone();
    for a in &parts[1..] {
        out = out.kronecker(a);
    }
    Ok(out)
}

/// Contiguous group of factors contracted away.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    /// Factors `0..i`.
    Prefix(usize),
    /// Factors `i..m`.
    Suffix(usize),
}

impl Block {
    /// Classify a set of factor indices; anything not a prefix or suffix is rejected.
    pub fn from_indices(m: usize, idx: &[usize]) -> Result<Block> {
        let mut s = idx.to_vec();
        s.sort_unstable();
        s.dedup();
        if s.is_empty() || s.len() >= m || s.iter().any(|&i| i >= m) {
            return Err(Error::Invalid("contraction block must be a proper nonempty subset".into()));
        }
        let contiguous = s.windows(2).all(|w| w[1] == w[0] + 1);
        if contiguous && s[0] == 0 {
            Ok(Block::Prefix(s.len()))
        } else if contiguous && *s.last().unwrap() == m - 1 {
            Ok(Block::Suffix(s[0]))
        } else {
            Err(Error::Invalid(format!("block {idx:?} is not a prefix or suffix")))
        }
    }
}

/// Pair `u` against `⊗ vs` on the given block and return the element of the remaining factors.
pub fn partial_contraction(space: &TensorSpace, u: &[f64], block: Block, vs: &[&[f64]]) -> Result<Vec<f64>> {
    let m = space.factors();
    if u.len() != space.dim() {
        return Err(Error::Dimension { expected: space.dim(), got: u.len() });
    }
    let range = match block {
        Block::Prefix(i) if i >= 1 && i < m => 0..i,
        Block::Suffix(i) if i >= 1 && i < m => i..m,
        _ => return Err(Error::Invalid(format!("bad block {block:?} for {m} factors"))),
    };
    if vs.len() != range.len() {
        return Err(Error::Dimension { expected: range.len(), got: vs.len() });
    }
    for (v, j) in vs.iter().zip(range.clone()) {
        if v.len() != space.dims[j] {
            return Err(Error::Dimension { expected: space.dims[j], got: v.len() });
        }
    }
    let w = tensor_vector(vs);
    let nb = w.len();
    let nr = space.dim() / nb;
    let mut out = vec![0.0; nr];
    match block {
        Block::Prefix(_) => {
            for (a, &wa) in w.iter().enumerate() {
                for (r, o) in out.iter_mut().enumerate() {
                    *o += u[a * nr + r] * wa;
                }
            }
        }
        Block::Suffix(_) => {
            for (r, o) in out.iter_mut().enumerate() {
                *o = (0..nb).map(|b| u[r * nb + b] * w[b]).sum();
            }
        }
    }
    Ok(out)
}

/// `Σ_k ‖A e_k‖`, comparable to the operator norm within a factor `n`.
pub fn column_norm_sum(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.norm()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_kronecker() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0]));
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0]));
        let k = tensor_matrix(&[&a, &b]).unwrap();
        let want = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![6.0, 2.0, 3.0, 1.0]));
        assert_eq!(k, want);
    }

    #[test]
    fn flatten_roundtrip() {
        let s = TensorSpace::new(vec![2, 3, 2]).unwrap();
        for i in 0..s.dim() {
            assert_eq!(s.flatten(&s.unflatten(i)), i);
        }
    }

    #[test]
    fn basis_contraction() {
        let s = TensorSpace::new(vec![2, 2]).unwrap();
        let u = s.basis(&[0, 1]);
        let r = partial_contraction(&s, &u, Block::Suffix(1), &[&[0.0, 1.0]]).unwrap();
        assert_eq!(r, vec![1.0, 0.0]);
        let r = partial_contraction(&s, &u, Block::Suffix(1), &[&[1.0, 0.0]]).unwrap();
        assert_eq!(r, vec![0.0, 0.0]);
    }

    #[test]
    fn middle_block_rejected() {
        assert!(Block::from_indices(3, &[1]).is_err());
        assert_eq!(Block::from_indices(3, &[1, 2]).unwrap(), Block::Suffix(1));
    }
}
