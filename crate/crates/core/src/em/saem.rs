//! Logistic regression with Gaussian covariates missing at random, fitted by
//! stochastic approximation EM.
//!
//! Each iteration redraws the missing coordinates of every incomplete row by
//! Metropolis-within-Gibbs under the current Gaussian and logistic
//! parameters, then moves the Gaussian moments and the logistic coefficients
//! toward their completed-data values with a decreasing step size.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::gaussian::{group_patterns, Conditional, GaussianJointModel};
use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::glm::{log1pexp, logistic, logistic_newton_direction, sigmoid, with_intercept, LogisticOptions};
use crate::linalg::{cholesky_ridge, spd_inverse};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaemOptions {
    pub max_iter: usize,
    /// Iterations run with step size 1 before the decay starts.
    pub burn_in: usize,
    pub step_exponent: f64,
    pub mcmc_sweeps: usize,
    /// Stop when no coefficient moved more than this over `window` iterations.
    pub tol: f64,
    pub window: usize,
    pub max_abs_coef: f64,
    pub seed: u64,
}

impl Default for SaemOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            burn_in: 50,
            step_exponent: 0.7,
            mcmc_sweeps: 5,
            tol: 1e-5,
            window: 10,
            max_abs_coef: 1e3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaemLogisticModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub gaussian: GaussianJointModel,
    pub iterations: usize,
    pub final_step: f64,
    pub converged: bool,
    /// Fraction of accepted Metropolis proposals over the whole run.
    pub acceptance_rate: f64,
    pub warnings: Vec<String>,
}

impl SaemLogisticModel {
    fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }
}

fn step_size(k: usize, opts: &SaemOptions) -> f64 {
    if k <= opts.burn_in {
        1.0
    } else {
        ((k - opts.burn_in) as f64).powf(-opts.step_exponent)
    }
}

/// Fit `logit P(W = 1 | X) = a0 + a'X` with `X ~ N(mu, Sigma)` partly missing.
pub fn fit_saem_logistic(x: &MaskedMatrix, w: &[bool], opts: SaemOptions) -> Result<SaemLogisticModel> {
    let (n, p) = (x.n(), x.p());
    if w.len() != n {
        return Err(Error::Dimension(format!("{n} rows, {} treatments", w.len())));
    }
    let n1 = w.iter().filter(|&&t| t).count();
    if n1 == 0 || n1 == n {
        return Err(Error::Empty("both treatment arms must be non-empty".into()));
    }
    if n <= p + 1 {
        return Err(Error::InvalidInput(format!("SAEM needs more rows ({n}) than parameters")));
    }
    let mut col_mean = vec![0.0; p];
    for (j, m) in col_mean.iter_mut().enumerate() {
        let c = x.observed_in_column(j);
        if c == 0 {
            return Err(Error::ColumnAllMissing(j));
        }
        *m = (0..n).filter_map(|i| x.get(i, j)).sum::<f64>() / c as f64;
    }
    let wf: Vec<f64> = w.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();

    // chain state: completed covariates, row-major
    let mut z = DMatrix::from_fn(n, p, |i, j| x.get(i, j).unwrap_or(col_mean[j]));
    let incomplete: Vec<(usize, Vec<usize>)> = (0..n)
        .filter(|&i| !x.row_complete(i))
        .map(|i| (i, (0..p).filter(|&j| !x.is_observed(i, j)).collect()))
        .collect();

    let nf = n as f64;
    let moments = |z: &DMatrix<f64>| {
        let s1 = z.row_sum().transpose() / nf;
        let s2 = z.tr_mul(z) / nf;
        (s1, s2)
    };
    let (mut s1, mut s2) = moments(&z);
    let mut mu = s1.clone();
    let mut sigma = &s2 - &mu * mu.transpose();

    let logit_opts = LogisticOptions {
        max_abs_coef: opts.max_abs_coef,
        ..Default::default()
    };
    let mut beta = logistic(&z, &wf, logit_opts)?.coef;
    let mut history: Vec<DVector<f64>> = vec![beta.clone()];
    let mut rng = seed::rng(opts.seed, &[0x7361_656d]);
    let (mut accepted, mut proposed) = (0u64, 0u64);
    let mut converged = false;
    let mut iterations = 0;
    let mut gamma = 1.0;

    for k in 1..=opts.max_iter {
        iterations = k;
        if !incomplete.is_empty() {
            let q = spd_inverse(&sigma)?;
            let mut r = DVector::zeros(p);
            for (i, mis) in &incomplete {
                let i = *i;
                for a in 0..p {
                    let mut acc = 0.0;
                    for b in 0..p {
                        acc += q[(a, b)] * (z[(i, b)] - mu[b]);
                    }
                    r[a] = acc;
                }
                let mut lp = beta[0] + (0..p).map(|j| beta[j + 1] * z[(i, j)]).sum::<f64>();
                for _ in 0..opts.mcmc_sweeps {
                    for &j in mis {
                        let qjj = q[(j, j)];
                        let delta = rng.sample::<f64, _>(StandardNormal) / qjj.sqrt();
                        let lp_new = lp + beta[j + 1] * delta;
                        let log_ratio = -(delta * r[j] + 0.5 * delta * delta * qjj) + wf[i] * (lp_new - lp)
                            - (log1pexp(lp_new) - log1pexp(lp));
                        proposed += 1;
                        let u: f64 = rng.random_range(0.0..1.0);
                        if u.ln() < log_ratio {
                            accepted += 1;
                            z[(i, j)] += delta;
                            for a in 0..p {
                                r[a] += delta * q[(a, j)];
                            }
                            lp = lp_new;
                        }
                    }
                }
            }
        }

        gamma = step_size(k, &opts);
        let (t1, t2) = moments(&z);
        s1 += (t1 - &s1) * gamma;
        s2 += (t2 - &s2) * gamma;
        mu = s1.clone();
        sigma = &s2 - &mu * mu.transpose();
        sigma = (&sigma + sigma.transpose()) * 0.5;

        let direction = logistic_newton_direction(&with_intercept(&z), &wf, &beta)?;
        beta += direction * gamma;
        let big = beta.amax();
        if !big.is_finite() || big > opts.max_abs_coef {
            return Err(Error::Separation { max_abs_coef: big });
        }
        history.push(beta.clone());
        if k > opts.burn_in && history.len() > opts.window {
            let past = &history[history.len() - 1 - opts.window];
            if (&beta - past).amax() < opts.tol {
                converged = true;
                break;
            }
        }
    }

    let acceptance_rate = if proposed == 0 { 1.0 } else { accepted as f64 / proposed as f64 };
    let mut warnings = Vec::new();
    if proposed > 0 && !(0.1..=0.9).contains(&acceptance_rate) {
        warnings.push(format!("Metropolis acceptance rate {acceptance_rate:.3} outside (0.1, 0.9)"));
    }
    if !converged {
        warnings.push(format!("SAEM stopped after {iterations} iterations without meeting the drift tolerance"));
    }
    Ok(SaemLogisticModel {
        intercept: beta[0],
        coef: beta.iter().skip(1).copied().collect(),
        gaussian: GaussianJointModel {
            mean: mu,
            cov: sigma,
            loglik_trace: Vec::new(),
            iterations,
            converged,
        },
        iterations,
        final_step: gamma,
        converged,
        acceptance_rate,
        warnings,
    })
}

fn clamp_open(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Monte Carlo estimate of `E[sigmoid(a0 + a'X) | X_obs]` for one row
/// (`None` = missing). Fully observed rows are evaluated exactly.
pub fn saem_predict_propensity<R: Rng>(
    model: &SaemLogisticModel,
    row: &[Option<f64>],
    n_mc: usize,
    rng: &mut R,
) -> Result<f64> {
    if row.len() != model.coef.len() {
        return Err(Error::Dimension(format!("row of length {}, model over {}", row.len(), model.coef.len())));
    }
    if n_mc == 0 {
        return Err(Error::InvalidInput("n_mc must be positive".into()));
    }
    let pattern: Vec<bool> = row.iter().map(Option::is_some).collect();
    let raw: Vec<f64> = row.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let cond = Conditional::new(&model.gaussian.cov, &pattern)?;
    let sampler = ConditionalSampler::new(cond)?;
    Ok(sampler.predict(model, &raw, n_mc, rng))
}

struct ConditionalSampler {
    cond: Conditional,
    chol: Option<DMatrix<f64>>,
}

impl ConditionalSampler {
    fn new(cond: Conditional) -> Result<Self> {
        let chol = if cond.mis.is_empty() { None } else { Some(cholesky_ridge(&cond.cov)?.l()) };
        Ok(Self { cond, chol })
    }

    fn predict<R: Rng>(&self, model: &SaemLogisticModel, raw: &[f64], n_mc: usize, rng: &mut R) -> f64 {
        let Some(l) = &self.chol else {
            return clamp_open(sigmoid(model.linear_predictor(raw)));
        };
        let mean = self.cond.mean(&model.gaussian.mean, raw);
        let base = model.intercept + self.cond.obs.iter().map(|&j| model.coef[j] * raw[j]).sum::<f64>();
        let b_mis = DVector::from_iterator(self.cond.mis.len(), self.cond.mis.iter().map(|&j| model.coef[j]));
        // a'(m + L e) = a'm + (L'a)'e
        let shift = base + b_mis.dot(&mean);
        let load = l.tr_mul(&b_mis);
        let m = self.cond.mis.len();
        let mut total = 0.0;
        for _ in 0..n_mc {
            let mut lp = shift;
            for a in 0..m {
                lp += load[a] * rng.sample::<f64, _>(StandardNormal);
            }
            total += sigmoid(lp);
        }
        clamp_open(total / n_mc as f64)
    }
}

/// Propensity predictions for every row of `x`; row `i` draws from its own
/// stream derived from `(seed, i)`.
pub fn saem_predict(model: &SaemLogisticModel, x: &MaskedMatrix, n_mc: usize, seed: u64) -> Result<Vec<f64>> {
    if x.p() != model.coef.len() {
        return Err(Error::Dimension(format!("{} columns, model over {}", x.p(), model.coef.len())));
    }
    if n_mc == 0 {
        return Err(Error::InvalidInput("n_mc must be positive".into()));
    }
    let mut out = vec![0.0; x.n()];
    for (pattern, rows) in group_patterns(x) {
        let sampler = ConditionalSampler::new(Conditional::new(&model.gaussian.cov, &pattern)?)?;
        for i in rows {
            let mut rng = seed::rng(seed, &[i as u64]);
            out[i] = sampler.predict(model, x.raw_row(i), n_mc, &mut rng);
        }
    }
    Ok(out)
}
