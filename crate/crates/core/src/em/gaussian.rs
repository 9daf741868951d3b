//! Maximum likelihood for a multivariate Gaussian with values missing at
//! random, by expectation-maximization.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::linalg::cholesky_ridge;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Relative parameter change below which iteration stops.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianJointModel {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Observed-data log-likelihood at the start of each iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Rows grouped by response pattern, in lexicographic pattern order.
pub(crate) fn group_patterns(x: &MaskedMatrix) -> Vec<(Vec<bool>, Vec<usize>)> {
    let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for i in 0..x.n() {
        groups.entry(x.mask_row(i).to_vec()).or_default().push(i);
    }
    groups.into_iter().collect()
}

/// Law of the missing block given the observed block for one pattern.
#[derive(Debug, Clone)]
pub(crate) struct Conditional {
    pub obs: Vec<usize>,
    pub mis: Vec<usize>,
    /// `Sigma_MO Sigma_OO^{-1}`.
    pub coef: DMatrix<f64>,
    /// `Sigma_MM - Sigma_MO Sigma_OO^{-1} Sigma_OM`.
    pub cov: DMatrix<f64>,
    /// `log det Sigma_OO`.
    pub log_det_oo: f64,
    /// `Sigma_OO^{-1}`.
    pub prec_oo: DMatrix<f64>,
}

impl Conditional {
    pub(crate) fn new(cov: &DMatrix<f64>, pattern: &[bool]) -> Result<Self> {
        let obs: Vec<usize> = (0..pattern.len()).filter(|&j| pattern[j]).collect();
        let mis: Vec<usize> = (0..pattern.len()).filter(|&j| !pattern[j]).collect();
        let sub = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |a, b| cov[(r[a], c[b])]);
        let s_mm = sub(&mis, &mis);
        if obs.is_empty() {
            return Ok(Self {
                coef: DMatrix::zeros(mis.len(), 0),
                cov: s_mm,
                log_det_oo: 0.0,
                prec_oo: DMatrix::zeros(0, 0),
                obs,
                mis,
            });
        }
        let s_oo = sub(&obs, &obs);
        let s_mo = sub(&mis, &obs);
        let chol = cholesky_ridge(&s_oo)?;
        let log_det_oo = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let prec_oo = chol.inverse();
        let coef = &s_mo * &prec_oo;
        let mut c = s_mm - &coef * s_mo.transpose();
        c = (&c + c.transpose()) * 0.5;
        Ok(Self {
            obs,
            mis,
            coef,
            cov: c,
            log_det_oo,
            prec_oo,
        })
    }

    /// Conditional mean of the missing block; `row` holds `NaN` at missing cells.
    pub(crate) fn mean(&self, mean: &DVector<f64>, row: &[f64]) -> DVector<f64> {
        let dev = DVector::from_iterator(self.obs.len(), self.obs.iter().map(|&j| row[j] - mean[j]));
        let shift = &self.coef * dev;
        DVector::from_iterator(self.mis.len(), self.mis.iter().enumerate().map(|(a, &j)| mean[j] + shift[a]))
    }
}

fn initial_moments(x: &MaskedMatrix) -> (DVector<f64>, DMatrix<f64>) {
    let q = x.p();
    let mut mean = DVector::zeros(q);
    let mut var = DVector::zeros(q);
    for j in 0..q {
        let vals: Vec<f64> = (0..x.n()).filter_map(|i| x.get(i, j)).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        mean[j] = m;
        var[j] = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        if var[j] <= 0.0 {
            var[j] = 1.0;
        }
    }
    (mean, DMatrix::from_diagonal(&var))
}

/// Fit mean and covariance of the rows of `x` by EM under MAR.
pub fn fit_em_gaussian(x: &MaskedMatrix, opts: EmOptions) -> Result<GaussianJointModel> {
    let (n, q) = (x.n(), x.p());
    if n <= q {
        return Err(Error::InvalidInput(format!("EM needs more rows ({n}) than columns ({q})")));
    }
    for j in 0..q {
        let c = x.observed_in_column(j);
        if c == 0 {
            return Err(Error::ColumnAllMissing(j));
        }
        if c < 2 {
            return Err(Error::InvalidInput(format!("column {j} observed fewer than twice")));
        }
    }
    let groups = group_patterns(x);
    let (mut mean, mut cov) = initial_moments(x);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let nf = n as f64;

    for _ in 0..opts.max_iter {
        iterations += 1;
        let mut t1 = DVector::zeros(q);
        let mut t2 = DMatrix::zeros(q, q);
        let mut loglik = 0.0;
        for (pattern, rows) in &groups {
            let cond = Conditional::new(&cov, pattern)?;
            let k = cond.obs.len() as f64;
            let mut filled = DVector::zeros(q);
            for &i in rows {
                let row = x.raw_row(i);
                if !cond.obs.is_empty() {
                    let dev = DVector::from_iterator(cond.obs.len(), cond.obs.iter().map(|&j| row[j] - mean[j]));
                    let quad = dev.dot(&(&cond.prec_oo * &dev));
                    loglik -= 0.5 * (k * (2.0 * PI).ln() + cond.log_det_oo + quad);
                }
                let m = cond.mean(&mean, row);
                for &j in &cond.obs {
                    filled[j] = row[j];
                }
                for (a, &j) in cond.mis.iter().enumerate() {
                    filled[j] = m[a];
                }
                t1 += &filled;
                t2.ger(1.0, &filled, &filled, 1.0);
            }
            let r = rows.len() as f64;
            for (a, &ja) in cond.mis.iter().enumerate() {
                for (b, &jb) in cond.mis.iter().enumerate() {
                    t2[(ja, jb)] += r * cond.cov[(a, b)];
                }
            }
        }
        trace.push(loglik);
        let new_mean = t1 / nf;
        let mut new_cov = t2 / nf - &new_mean * new_mean.transpose();
        new_cov = (&new_cov + new_cov.transpose()) * 0.5;
        let change = (&new_mean - &mean).amax().max((&new_cov - &cov).amax());
        let scale = new_mean.amax().max(new_cov.amax()).max(1e-300);
        mean = new_mean;
        cov = new_cov;
        if change / scale < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(GaussianJointModel {
        mean,
        cov,
        loglik_trace: trace,
        iterations,
        converged,
    })
}

impl GaussianJointModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Conditional mean of every coordinate given the observed ones in
    /// `row` (`None` = missing). Observed coordinates are returned as is.
    pub fn conditional_mean(&self, row: &[Option<f64>]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::Dimension(format!("row of length {}, model of dimension {}", row.len(), self.dim())));
        }
        let pattern: Vec<bool> = row.iter().map(Option::is_some).collect();
        let raw: Vec<f64> = row.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let cond = Conditional::new(&self.cov, &pattern)?;
        let m = cond.mean(&self.mean, &raw);
        let mut out = raw;
        for (a, &j) in cond.mis.iter().enumerate() {
            out[j] = m[a];
        }
        Ok(out)
    }
}

/// `E[Y | X_obs]` for every row of `x`, where the model's last coordinate is
/// `Y` and the others follow the columns of `x`.
pub fn em_linear_predict(model: &GaussianJointModel, x: &MaskedMatrix) -> Result<Vec<f64>> {
    let q = model.dim();
    if x.p() + 1 != q {
        return Err(Error::Dimension(format!(
            "model over {} covariates and an outcome, rows have {} columns",
            q.saturating_sub(1),
            x.p()
        )));
    }
    let mut out = vec![0.0; x.n()];
    for (pattern, rows) in group_patterns(x) {
        let mut full = pattern.clone();
        full.push(false);
        let cond = Conditional::new(&model.cov, &full)?;
        let mut buf = vec![f64::NAN; q];
        for i in rows {
            buf[..q - 1].copy_from_slice(x.raw_row(i));
            let m = cond.mean(&model.mean, &buf);
            out[i] = m[m.len() - 1];
        }
    }
    Ok(out)
}

/// EM fit of the joint law of `(x, y)`, with `y` fully observed.
pub fn fit_em_regression(x: &MaskedMatrix, y: &[f64], opts: EmOptions) -> Result<GaussianJointModel> {
    if y.len() != x.n() {
        return Err(Error::Dimension(format!("{} rows, {} outcomes", x.n(), y.len())));
    }
    let joint = x.hstack_complete(&DMatrix::from_column_slice(y.len(), 1, y))?;
    fit_em_gaussian(&joint, opts)
}
