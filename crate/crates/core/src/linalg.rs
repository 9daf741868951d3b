//! Small dense linear-algebra helpers over nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factorization, retrying with a growing ridge on the diagonal
/// (starting at `1e-8` times the mean diagonal) when `a` is not numerically
/// positive definite.
pub fn cholesky_ridge(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let k = a.nrows();
    let scale = (a.trace() / k.max(1) as f64).abs().max(1e-300);
    let mut ridge = 1e-8;
    while ridge <= 1e-2 {
        let mut b = a.clone();
        for i in 0..k {
            b[(i, i)] += ridge * scale;
        }
        if let Some(c) = Cholesky::new(b) {
            return Ok(c);
        }
        ridge *= 100.0;
    }
    Err(Error::NotPositiveDefinite(format!("{k}x{k} matrix")))
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cholesky_ridge(a)?.inverse())
}

pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(cholesky_ridge(a)?.solve(b))
}

/// Columns whose entries are not all identical.
pub fn non_constant_columns(x: &DMatrix<f64>) -> Vec<usize> {
    (0..x.ncols())
        .filter(|&j| {
            let c = x.column(j);
            c.iter().any(|&v| v != c[0])
        })
        .collect()
}

pub fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, k| x[(i, cols[k])])
}

pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |k, j| x[(rows[k], j)])
}

/// Drop constant columns (e.g. an all-observed mask indicator).
pub fn drop_constant_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    select_columns(x, &non_constant_columns(x))
}

pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with `n - 1` denominator (0 for fewer than 2 values).
pub fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
