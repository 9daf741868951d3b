//! Complete-data regression fits: ordinary least squares and logistic
//! regression by Newton-Raphson. Both add an intercept.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_ridge, spd_solve};

/// Coefficients with the intercept first.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coef: DVector<f64>,
}

impl LinearFit {
    pub fn intercept(&self) -> f64 {
        self.coef[0]
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.coef.iter().skip(1).copied().collect()
    }

    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let slopes = self.coef.rows(1, self.coef.len() - 1);
        let lp = x * slopes;
        lp.iter().map(|v| v + self.coef[0]).collect()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.linear_predictor(x)
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.linear_predictor(x).into_iter().map(sigmoid).collect()
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
pub fn log1pexp(t: f64) -> f64 {
    if t > 35.0 {
        t
    } else if t < -35.0 {
        t.exp()
    } else {
        t.exp().ln_1p()
    }
}

pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    out.columns_mut(1, x.ncols()).copy_from(x);
    out
}

/// Least squares via the normal equations (ridge fallback when singular).
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearFit> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} rows, {} targets", x.nrows(), y.len())));
    }
    if x.nrows() == 0 {
        return Err(Error::Empty("least squares on zero rows".into()));
    }
    let z = with_intercept(x);
    let ztz = z.tr_mul(&z);
    let zty = z.tr_mul(&DVector::from_column_slice(y));
    Ok(LinearFit {
        coef: spd_solve(&ztz, &zty)?,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct LogisticOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Coefficients beyond this magnitude are taken as evidence of separation.
    pub max_abs_coef: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            max_abs_coef: 1e3,
        }
    }
}

fn logistic_loglik(z: &DMatrix<f64>, w: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = z * beta;
    eta.iter()
        .zip(w)
        .map(|(&e, &wi)| wi * e - log1pexp(e))
        .sum()
}

/// One Newton direction `H^{-1} g` at `beta` for design `z` (intercept included).
pub(crate) fn logistic_newton_direction(
    z: &DMatrix<f64>,
    w: &[f64],
    beta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let eta = z * beta;
    let mut zw = z.clone();
    let mut resid = DVector::zeros(w.len());
    for i in 0..w.len() {
        let p = sigmoid(eta[i]);
        resid[i] = w[i] - p;
        let s = (p * (1.0 - p)).max(1e-12).sqrt();
        zw.row_mut(i).scale_mut(s);
    }
    let h = zw.tr_mul(&zw);
    let g = z.tr_mul(&resid);
    Ok(cholesky_ridge(&h)?.solve(&g))
}

/// Maximum-likelihood logistic regression of `w` (0/1) on `x`.
pub fn logistic(x: &DMatrix<f64>, w: &[f64], opts: LogisticOptions) -> Result<LinearFit> {
    if x.nrows() != w.len() {
        return Err(Error::Dimension(format!("{} rows, {} targets", x.nrows(), w.len())));
    }
    let n1 = w.iter().filter(|&&v| v > 0.5).count();
    if n1 == 0 || n1 == w.len() {
        return Err(Error::Empty("logistic regression needs both classes".into()));
    }
    let z = with_intercept(x);
    let mut beta = DVector::zeros(z.ncols());
    let pbar = n1 as f64 / w.len() as f64;
    beta[0] = (pbar / (1.0 - pbar)).ln();
    let mut ll = logistic_loglik(&z, w, &beta);
    for _ in 0..opts.max_iter {
        let step = logistic_newton_direction(&z, w, &beta)?;
        let mut t = 1.0;
        let mut next = &beta + &step * t;
        let mut ll_next = logistic_loglik(&z, w, &next);
        while ll_next < ll - 1e-12 * ll.abs().max(1.0) && t > 1e-6 {
            t *= 0.5;
            next = &beta + &step * t;
            ll_next = logistic_loglik(&z, w, &next);
        }
        let delta = (&next - &beta).amax();
        beta = next;
        ll = ll_next;
        let big = beta.amax();
        if !big.is_finite() || big > opts.max_abs_coef {
            return Err(Error::Separation { max_abs_coef: big });
        }
        if delta < opts.tol {
            break;
        }
    }
    // Complete separation drives the log-likelihood to 0 while the
    // coefficients diverge slowly.
    if ll > -1e-6 {
        return Err(Error::Separation {
            max_abs_coef: beta.amax(),
        });
    }
    Ok(LinearFit { coef: beta })
}
