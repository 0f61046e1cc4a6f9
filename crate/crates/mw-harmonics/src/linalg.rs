//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    match (m.nrows(), m.ncols()) {
        (1, 1) => m[(0, 0)].abs(),
        (2, 2) => {
            let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            0.5 * ((a + d).hypot(c - b) + (a - d).hypot(b + c))
        }
        _ => m.clone().svd(false, false).singular_values.max(),
    }
}

/// Euclidean norm of `m * v` without allocating for the common small sizes.
pub fn apply_norm(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let (r, c) = m.shape();
    let mut acc = 0.0;
    for i in 0..r {
        let mut s = 0.0;
        for j in 0..c {
            s += m[(i, j)] * v[j];
        }
        acc += s * s;
    }
    acc.sqrt()
}

pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).eigenvalues.min()
}

/// `f` applied to the spectrum of a symmetric matrix.
pub fn sym_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let e = sym_eigen(m);
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(f));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

pub fn sym_pow(m: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    sym_fn(m, |x| x.max(0.0).powf(p))
}

pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |x| x.max(0.0).sqrt())
}

pub fn sym_expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, f64::exp)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Minimum-norm least-squares solution.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let tol = 1e-13 * svd.singular_values.max().max(1e-300);
    svd.solve(b, tol).expect("svd computed with u and v")
}

/// Orthonormal basis of the null space of `a`.
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> Vec<DVector<f64>> {
    let (r, c) = a.shape();
    // Pad to square so the full right singular basis is available.
    let mut sq = DMatrix::zeros(r.max(c), c);
    sq.view_mut((0, 0), (r, c)).copy_from(a);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let smax = svd.singular_values.max().max(1e-300);
    (0..c)
        .filter(|&i| svd.singular_values[i] <= rel_tol * smax)
        .map(|i| vt.row(i).transpose())
        .collect()
}

/// Lawson-Hanson active-set solver for `min ||a x - b||, x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = a.ncols();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let tol = 1e-13 * scale * scale * (a.nrows().max(n) as f64);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let cand = (0..n).filter(|&j| !passive[j]).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let t = match cand {
            Some(t) if w[t] > tol => t,
            _ => break,
        };
        passive[t] = true;
        for _ in 0..max_outer {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let ap = a.select_columns(idx.iter());
            let sp = lstsq(&ap, b);
            if sp.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &j) in idx.iter().enumerate() {
                    x[j] = sp[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &j) in idx.iter().enumerate() {
                if sp[k] <= 0.0 {
                    let denom = x[j] - sp[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (k, &j) in idx.iter().enumerate() {
                x[j] += alpha * (sp[k] - x[j]);
                if x[j] <= 1e-15 * scale {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    let res = (b - a * &x).norm();
    (x, res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_norm_matches_svd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let s = m.clone().svd(false, false).singular_values.max();
        assert!((op_norm(&m) - s).abs() < 1e-14 * s);
    }

    #[test]
    fn nnls_simple() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let (x, r) = nnls(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-14 && x[1] == 0.0);
        assert!((r - 1.0).abs() < 1e-14);
    }
}

/// Serde adapter storing a matrix as row-major nested arrays.
pub mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
    }
}
