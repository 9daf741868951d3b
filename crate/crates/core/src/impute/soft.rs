//! Matrix completion by iterated singular-value soft-thresholding.

use nalgebra::DMatrix;
use rand::seq::index::sample;

use super::{observed_column_means, CompletedMatrix, ImputeMethod};
use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftImputeOptions {
    pub lambda: f64,
    /// Largest rank kept; `None` means `min(n, p)`.
    pub max_rank: Option<usize>,
    /// Relative squared Frobenius change below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SoftImputeOptions {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            max_rank: None,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftImputeFit {
    /// Observed cells kept, missing cells from the low-rank fit.
    pub completed: CompletedMatrix,
    /// The low-rank fit on every cell.
    pub low_rank: DMatrix<f64>,
    /// Left singular vectors scaled by the thresholded singular values, one
    /// column per retained component.
    pub u_hat: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SoftImputeFit {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.singular_values.iter().sum()
    }
}

struct Thresholded {
    fit: DMatrix<f64>,
    u_hat: DMatrix<f64>,
    singular_values: Vec<f64>,
}

fn svd_threshold(m: &DMatrix<f64>, lambda: f64, max_rank: usize) -> Result<Thresholded> {
    let (n, p) = m.shape();
    let svd = m.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numerical("SVD did not return singular vectors".into())),
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let kept: Vec<(usize, f64)> = order
        .into_iter()
        .map(|k| (k, svd.singular_values[k] - lambda))
        .filter(|&(_, s)| s > 0.0)
        .take(max_rank)
        .collect();
    let r = kept.len();
    let mut u_hat = DMatrix::zeros(n, r);
    let mut v = DMatrix::zeros(p, r);
    for (c, &(k, s)) in kept.iter().enumerate() {
        u_hat.set_column(c, &(u.column(k) * s));
        v.set_column(c, &vt.row(k).transpose());
    }
    Ok(Thresholded {
        fit: &u_hat * v.transpose(),
        u_hat,
        singular_values: kept.iter().map(|k| k.1).collect(),
    })
}

fn fill(x: &MaskedMatrix, z: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.n(), x.p(), |i, j| x.get(i, j).unwrap_or(z[(i, j)]))
}

fn soft_impute_from(x: &MaskedMatrix, opts: SoftImputeOptions, start: DMatrix<f64>) -> Result<SoftImputeFit> {
    if !(opts.lambda >= 0.0) || !opts.lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda = {} must be a non-negative number", opts.lambda)));
    }
    let max_rank = opts.max_rank.unwrap_or(x.n().min(x.p())).min(x.n().min(x.p()));
    let mut z = start;
    let mut current = svd_threshold(&fill(x, &z), opts.lambda, max_rank)?;
    let mut iterations = 1;
    let mut converged = false;
    while iterations < opts.max_iter {
        let next = svd_threshold(&fill(x, &current.fit), opts.lambda, max_rank)?;
        iterations += 1;
        let diff = (&next.fit - &current.fit).norm_squared();
        let base = current.fit.norm_squared();
        current = next;
        if diff <= opts.tol * base.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    if !x.has_missing() {
        // one thresholding step is the exact answer
        converged = true;
    }
    z = current.fit.clone();
    Ok(SoftImputeFit {
        completed: CompletedMatrix {
            values: fill(x, &z),
            source_mask: (0..x.n()).flat_map(|i| x.mask_row(i).to_vec()).collect(),
            method: ImputeMethod::SoftImpute,
        },
        low_rank: current.fit,
        u_hat: current.u_hat,
        singular_values: current.singular_values,
        iterations,
        converged,
    })
}

/// Complete `x` starting from its column-mean fill.
pub fn soft_impute(x: &MaskedMatrix, opts: SoftImputeOptions) -> Result<SoftImputeFit> {
    let means = observed_column_means(x)?;
    let start = DMatrix::from_fn(x.n(), x.p(), |_, j| means[j]);
    soft_impute_from(x, opts, start)
}

/// Default grid: the largest singular value of the mean-filled matrix times
/// a decreasing ladder of fractions.
pub fn lambda_grid(x: &MaskedMatrix) -> Result<Vec<f64>> {
    let means = observed_column_means(x)?;
    let filled = DMatrix::from_fn(x.n(), x.p(), |i, j| x.get(i, j).unwrap_or(means[j]));
    let s_max = filled.singular_values().max();
    Ok([0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005].iter().map(|f| f * s_max).collect())
}

/// Pick the grid value with the smallest reconstruction error on a random
/// 10% of observed cells held out from fitting. Fits run from the largest
/// to the smallest value, each warm-started at the previous solution; errors
/// within a relative `1e-9` of the best so far count as ties and go to the
/// larger value.
pub fn select_lambda(x: &MaskedMatrix, grid: &[f64], opts: SoftImputeOptions, seed: u64) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let (n, p) = (x.n(), x.p());
    let cells: Vec<usize> = (0..n * p).filter(|&c| x.is_observed(c / p, c % p)).collect();
    let k = (cells.len() / 10).max(1);
    let mut rng = seed::rng(seed, &[0x6c61_6d62]);
    let held: Vec<usize> = sample(&mut rng, cells.len(), k).into_iter().map(|a| cells[a]).collect();
    let mut values = Vec::with_capacity(n * p);
    let mut observed = Vec::with_capacity(n * p);
    for i in 0..n {
        for j in 0..p {
            values.push(x.get(i, j).unwrap_or(f64::NAN));
            observed.push(x.is_observed(i, j));
        }
    }
    for &c in &held {
        observed[c] = false;
    }
    let train = MaskedMatrix::new(n, p, values, observed)?;
    let means = observed_column_means(&train)?;

    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut start = DMatrix::from_fn(n, p, |_, j| means[j]);
    let mut best = (f64::INFINITY, grid[order[0]]);
    for idx in order {
        let fit = soft_impute_from(&train, SoftImputeOptions { lambda: grid[idx], ..opts }, start)?;
        let err: f64 = held
            .iter()
            .map(|&c| (fit.low_rank[(c / p, c % p)] - x.get(c / p, c % p).unwrap_or(0.0)).powi(2))
            .sum();
        if err < best.0 * (1.0 - 1e-9) {
            best = (err, grid[idx]);
        }
        start = fit.low_rank;
    }
    Ok(best.1)
}
