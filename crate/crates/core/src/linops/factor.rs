//! Full SVD of a small wide matrix, used for the per-axis blur factors and
//! the test-only dense operator.

use nalgebra::DMatrix;

use super::mat::Mat;
use crate::error::{DdrmError, Result};
use crate::scalar::Real;

/// `A = U · [diag(s) 0] · Vᵀ` with `U` square `m×m`, `V` square `n×n`.
#[derive(Debug, Clone)]
pub struct FullSvd<T> {
    pub u: Mat<T>,
    pub s: Vec<T>,
    pub v: Mat<T>,
}

/// Factorizes an `m×n` matrix with `m ≤ n`. Singular values come back sorted
/// descending; ties keep the order nalgebra produced them in.
pub fn full_svd<T: Real>(a: &Mat<T>) -> Result<FullSvd<T>> {
    let (m, n) = (a.rows, a.cols);
    if m > n {
        return Err(DdrmError::Construction(format!(
            "expected a wide matrix (m <= n), got {m}x{n}"
        )));
    }
    if m == 0 {
        return Ok(FullSvd {
            u: Mat::zeros(0, 0),
            s: Vec::new(),
            v: Mat::identity(n),
        });
    }
    let dm = DMatrix::<f64>::from_fn(m, n, |i, j| a.get(i, j).as_f64());
    let svd = dm.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(DdrmError::Numerical("SVD did not converge".into())),
    };
    let s = svd.singular_values;

    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| s[j].total_cmp(&s[i]));

    // thin V is n×m; complete to an orthonormal basis of R^n
    let mut v_thin = DMatrix::<f64>::zeros(n, m);
    for (col, &src) in idx.iter().enumerate() {
        for r in 0..n {
            v_thin[(r, col)] = vt[(src, r)];
        }
    }
    let v_full = complete_basis(&v_thin);

    let u_sorted = Mat::from_fn(m, m, |r, c| T::lit(u[(r, idx[c])]));
    let s_sorted = idx.iter().map(|&i| T::lit(s[i].max(0.0))).collect();
    let v = Mat::from_fn(n, n, |r, c| T::lit(v_full[(r, c)]));
    Ok(FullSvd {
        u: u_sorted,
        s: s_sorted,
        v,
    })
}

/// Extends orthonormal columns `basis` (n×k) to an n×n orthogonal matrix
/// whose first k columns are exactly `basis`.
fn complete_basis(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = basis.shape();
    if k == n {
        return basis.clone();
    }
    let mut stacked = DMatrix::<f64>::zeros(n, k + n);
    stacked.view_mut((0, 0), (n, k)).copy_from(basis);
    stacked
        .view_mut((0, k), (n, n))
        .copy_from(&DMatrix::<f64>::identity(n, n));
    let q = stacked.qr().q();
    let mut out = DMatrix::<f64>::zeros(n, n);
    out.view_mut((0, 0), (n, k)).copy_from(basis);
    out.view_mut((0, k), (n, n - k))
        .copy_from(&q.view((0, k), (n, n - k)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_orthogonal(m: &Mat<f64>) {
        let g = m.t_matmul(m);
        for i in 0..g.rows {
            for j in 0..g.cols {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - want).abs() < 1e-12, "gram[{i},{j}]={}", g.get(i, j));
            }
        }
    }

    #[test]
    fn wide_matrix_reconstructs() {
        let a = Mat::from_fn(3, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5 + 0.1 * j as f64);
        let f = full_svd(&a).unwrap();
        check_orthogonal(&f.u);
        check_orthogonal(&f.v);
        assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        let us = Mat::from_fn(3, 5, |i, j| if j < 3 { f.u.get(i, j) * f.s[j] } else { 0.0 });
        let rec = us.matmul_t(&f.v);
        for (x, y) in rec.data.iter().zip(&a.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_square() {
        let a = Mat::from_fn(4, 4, |i, _| i as f64);
        let f = full_svd(&a).unwrap();
        check_orthogonal(&f.u);
        check_orthogonal(&f.v);
        assert!(f.s[1].abs() < 1e-12);
    }

    #[test]
    fn tall_is_rejected() {
        assert!(full_svd(&Mat::<f64>::zeros(3, 2)).is_err());
    }
}
