//! Multiple imputation by fully conditional specification (chained
//! equations) with Gaussian linear conditional models. Each conditional fit
//! uses a bootstrap resample of the rows where the target column is
//! observed, so the imputations reflect parameter uncertainty.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{CompletedMatrix, ImputeMethod};
use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcsOptions {
    pub m: usize,
    pub n_cycles: usize,
    pub seed: u64,
}

impl Default for FcsOptions {
    fn default() -> Self {
        Self {
            m: 20,
            n_cycles: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationSet {
    pub matrices: Vec<CompletedMatrix>,
    pub seeds: Vec<u64>,
    /// Number of conditional fits that needed the ridge fallback.
    pub ridge_fallbacks: usize,
}

impl ImputationSet {
    pub fn m(&self) -> usize {
        self.matrices.len()
    }
}

/// Solve the normal equations; on failure retry once with `1e-6 I`.
fn solve_normal(xtx: DMatrix<f64>, xty: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if let Some(c) = xtx.clone().cholesky() {
        return Ok((c.solve(xty), false));
    }
    let k = xtx.nrows();
    let ridged = xtx + DMatrix::identity(k, k) * 1e-6;
    match ridged.cholesky() {
        Some(c) => Ok((c.solve(xty), true)),
        None => Err(Error::Numerical("conditional regression is singular even with ridge".into())),
    }
}

struct Column {
    index: usize,
    observed: Vec<usize>,
    missing: Vec<usize>,
}

fn impute_once(
    x: &MaskedMatrix,
    extra: &[Vec<f64>],
    columns: &[Column],
    n_cycles: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, usize)> {
    let (n, p) = (x.n(), x.p());
    let mut z = DMatrix::from_fn(n, p, |i, j| x.get(i, j).unwrap_or(0.0));
    for col in columns {
        for &i in &col.missing {
            let donor = col.observed[rng.random_range(0..col.observed.len())];
            z[(i, col.index)] = z[(donor, col.index)];
        }
    }
    // intercept, other covariates, then W and Y
    let k = p + extra.len();
    let mut fallbacks = 0;
    let mut row = vec![0.0; k];
    let fill_row = |z: &DMatrix<f64>, i: usize, j: usize, row: &mut [f64]| {
        row[0] = 1.0;
        let mut c = 1;
        for l in 0..p {
            if l != j {
                row[c] = z[(i, l)];
                c += 1;
            }
        }
        for e in extra {
            row[c] = e[i];
            c += 1;
        }
    };
    for _ in 0..n_cycles {
        for col in columns {
            let j = col.index;
            let nobs = col.observed.len();
            let mut xtx = DMatrix::zeros(k, k);
            let mut xty = DVector::zeros(k);
            let mut sample = Vec::with_capacity(nobs);
            for _ in 0..nobs {
                let i = col.observed[rng.random_range(0..nobs)];
                sample.push(i);
                fill_row(&z, i, j, &mut row);
                let yv = z[(i, j)];
                for a in 0..k {
                    xty[a] += row[a] * yv;
                    for b in a..k {
                        xtx[(a, b)] += row[a] * row[b];
                    }
                }
            }
            for a in 0..k {
                for b in 0..a {
                    xtx[(a, b)] = xtx[(b, a)];
                }
            }
            let (coef, ridged) = solve_normal(xtx, &xty)?;
            fallbacks += ridged as usize;
            let mut rss = 0.0;
            for &i in &sample {
                fill_row(&z, i, j, &mut row);
                let fit: f64 = row.iter().zip(coef.iter()).map(|(a, b)| a * b).sum();
                rss += (z[(i, j)] - fit).powi(2);
            }
            let dof = nobs.saturating_sub(k).max(1);
            let sd = (rss / dof as f64).sqrt();
            for &i in &col.missing {
                fill_row(&z, i, j, &mut row);
                let fit: f64 = row.iter().zip(coef.iter()).map(|(a, b)| a * b).sum();
                z[(i, j)] = fit + sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    Ok((z, fallbacks))
}

/// `m` imputations of `x` by chained equations. `w` and `y` enter every
/// conditional model as predictors and are never imputed. Imputation `k`
/// uses the stream derived from `(seed, k)`, so results do not depend on
/// how the imputations are scheduled.
pub fn fcs_multiple_impute(x: &MaskedMatrix, w: &[bool], y: &[f64], opts: FcsOptions) -> Result<ImputationSet> {
    let (n, p) = (x.n(), x.p());
    if w.len() != n || y.len() != n {
        return Err(Error::Dimension(format!("{n} rows, {} treatments, {} outcomes", w.len(), y.len())));
    }
    if opts.m == 0 {
        return Err(Error::Config("number of imputations must be positive".into()));
    }
    let mut columns = Vec::new();
    for j in 0..p {
        let observed: Vec<usize> = (0..n).filter(|&i| x.is_observed(i, j)).collect();
        if observed.len() == n {
            continue;
        }
        if observed.is_empty() {
            return Err(Error::ColumnAllMissing(j));
        }
        if observed.len() < p + 3 {
            return Err(Error::InvalidInput(format!(
                "column {j} has {} observed values, chained equations need at least {}",
                observed.len(),
                p + 3
            )));
        }
        let missing = (0..n).filter(|&i| !x.is_observed(i, j)).collect();
        columns.push(Column { index: j, observed, missing });
    }
    let extra = vec![w.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect::<Vec<f64>>(), y.to_vec()];
    let seeds: Vec<u64> = (0..opts.m as u64).map(|k| seed::derive(opts.seed, &[k])).collect();
    let source_mask: Vec<bool> = (0..n).flat_map(|i| x.mask_row(i).to_vec()).collect();
    let results: Vec<Result<(DMatrix<f64>, usize)>> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = seed::rng(s, &[]);
            impute_once(x, &extra, &columns, opts.n_cycles, &mut rng)
        })
        .collect();
    let mut matrices = Vec::with_capacity(opts.m);
    let mut ridge_fallbacks = 0;
    for r in results {
        let (values, f) = r?;
        ridge_fallbacks += f;
        matrices.push(CompletedMatrix {
            values,
            source_mask: source_mask.clone(),
            method: ImputeMethod::Fcs,
        });
    }
    Ok(ImputationSet {
        matrices,
        seeds,
        ridge_fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, holes: &[(usize, usize)]) -> (MaskedMatrix, Vec<bool>, Vec<f64>) {
        let mut rows: Vec<Vec<Option<f64>>> = (0..n)
            .map(|i| {
                let t = i as f64;
                vec![Some((t * 0.37).sin()), Some((t * 0.11).cos() + 0.5 * (t * 0.37).sin()), Some(t.sqrt())]
            })
            .collect();
        for &(i, j) in holes {
            rows[i][j] = None;
        }
        let w = (0..n).map(|i| i % 2 == 0).collect();
        let y = (0..n).map(|i| (i as f64 * 0.05).sin()).collect();
        (MaskedMatrix::from_rows(&rows).unwrap(), w, y)
    }

    #[test]
    fn no_missing_returns_input() {
        let (x, w, y) = toy(20, &[]);
        let set = fcs_multiple_impute(&x, &w, &y, FcsOptions { m: 1, ..Default::default() }).unwrap();
        for i in 0..20 {
            for j in 0..3 {
                assert_eq!(set.matrices[0].values[(i, j)], x.get(i, j).unwrap());
            }
        }
    }

    #[test]
    fn imputations_differ_and_preserve_observed() {
        let holes: Vec<(usize, usize)> = (0..40).step_by(4).map(|i| (i, i % 3)).collect();
        let (x, w, y) = toy(40, &holes);
        let set = fcs_multiple_impute(&x, &w, &y, FcsOptions { m: 3, seed: 5, ..Default::default() }).unwrap();
        for m in &set.matrices {
            for i in 0..40 {
                for j in 0..3 {
                    if let Some(v) = x.get(i, j) {
                        assert_eq!(m.values[(i, j)].to_bits(), v.to_bits());
                    }
                }
            }
        }
        let differs = holes.iter().any(|&(i, j)| set.matrices[0].values[(i, j)] != set.matrices[1].values[(i, j)]);
        assert!(differs);
        let again = fcs_multiple_impute(&x, &w, &y, FcsOptions { m: 3, seed: 5, ..Default::default() }).unwrap();
        assert_eq!(set, again);
    }

    #[test]
    fn too_few_observed_values() {
        let holes: Vec<(usize, usize)> = (0..6).map(|i| (i, 0)).collect();
        let (x, w, y) = toy(10, &holes);
        assert!(fcs_multiple_impute(&x, &w, &y, FcsOptions::default()).is_err());
    }
}
