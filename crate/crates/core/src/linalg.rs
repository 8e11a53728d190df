use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub(crate) fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.values())
}

/// Leading `k` left singular vectors of `m` (as columns, descending singular
/// value) together with all singular values.
///
/// When `k` exceeds `min(rows, cols)` the basis is completed with an
/// orthonormal complement built by Gram-Schmidt over the standard basis.
pub(crate) fn leading_left_singular_vectors(m: &Matrix, k: usize) -> Result<(Matrix, Vec<f64>)> {
    assert!(k >= 1 && k <= m.rows(), "requested {k} vectors from {} rows", m.rows());
    let svd = nalgebra::linalg::SVD::try_new(to_dmatrix(m), true, false, f64::EPSILON, 0).ok_or_else(|| {
        Error::Numerical {
            sweep: 0,
            message: "SVD did not converge".into(),
        }
    })?;
    let u = svd.u.expect("u requested");
    let singular: Vec<f64> = svd.singular_values.iter().copied().collect();
    let rows = m.rows();
    let avail = u.ncols().min(k);
    let mut cols: Vec<Vec<f64>> = (0..avail).map(|c| u.column(c).iter().copied().collect()).collect();
    let mut e = 0;
    while cols.len() < k {
        let mut v = vec![0.0; rows];
        v[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            cols.push(v);
        }
    }
    let mut out = Matrix::from_fn(rows, k, |r, c| cols[c][r]);
    fix_signs(&mut out);
    Ok((out, singular))
}

/// Flips columns so the largest-magnitude entry of each is positive
/// (first such entry on ties).
pub(crate) fn fix_signs(m: &mut Matrix) {
    let (rows, cols) = (m.rows(), m.cols());
    for c in 0..cols {
        let mut best = 0;
        for r in 1..rows {
            if m.get(r, c).abs() > m.get(best, c).abs() {
                best = r;
            }
        }
        if m.get(best, c) < 0.0 {
            let vals = m.values_mut();
            for r in 0..rows {
                vals[r * cols + c] = -vals[r * cols + c];
            }
        }
    }
}

/// First `k` columns of `m`.
pub(crate) fn leading_columns(m: &Matrix, k: usize) -> Matrix {
    Matrix::from_fn(m.rows(), k, |r, c| m.get(r, c))
}
