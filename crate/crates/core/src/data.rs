//! Containers for incomplete observational data.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n x p` real matrix with an aligned response mask.
///
/// Values are stored row-major. Missing cells hold `NaN` internally so that
/// accidental arithmetic on them is visible, but they are never handed out:
/// [`MaskedMatrix::get`] returns `None` and [`MaskedMatrix::value`] errors.
#[derive(Debug, Clone)]
pub struct MaskedMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

/// Equal when shapes and masks agree and observed values are bit-identical.
impl PartialEq for MaskedMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.p == other.p
            && self.observed == other.observed
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.observed)
                .all(|((a, b), &o)| !o || a.to_bits() == b.to_bits())
    }
}

impl MaskedMatrix {
    /// Build from row-major values and an observed-indicator mask of the same
    /// shape. Values under a missing mask entry are ignored.
    pub fn new(n: usize, p: usize, mut values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        if values.len() != n * p || observed.len() != n * p {
            return Err(Error::Dimension(format!(
                "expected {} cells, got {} values and {} mask entries",
                n * p,
                values.len(),
                observed.len()
            )));
        }
        for (k, (v, &o)) in values.iter_mut().zip(&observed).enumerate() {
            if o {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "observed cell ({}, {}) is not finite",
                        k / p.max(1),
                        k % p.max(1)
                    )));
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self {
            n,
            p,
            values,
            observed,
        })
    }

    pub fn from_complete(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(n, p, values, vec![true; n * p])
    }

    pub fn from_dmatrix(x: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        let values = (0..n)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .map(|(i, j)| x[(i, j)])
            .collect();
        Self::from_complete(n, p, values)
    }

    /// Rows given as `Option<f64>` cells; `None` marks a missing cell.
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * p);
        let mut observed = Vec::with_capacity(n * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Dimension(format!(
                    "row {i} has {} cells, expected {p}",
                    row.len()
                )));
            }
            for c in row {
                values.push(c.unwrap_or(f64::NAN));
                observed.push(c.is_some());
            }
        }
        Self::new(n, p, values, observed)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.p + j]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.p + j;
        self.observed[k].then(|| self.values[k])
    }

    pub fn value(&self, i: usize, j: usize) -> Result<f64> {
        self.get(i, j).ok_or(Error::MissingCell { row: i, col: j })
    }

    /// Raw row slice; missing cells are `NaN`.
    pub(crate) fn raw_row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub(crate) fn mask_row(&self, i: usize) -> &[bool] {
        &self.observed[i * self.p..(i + 1) * self.p]
    }

    pub fn row_complete(&self, i: usize) -> bool {
        self.mask_row(i).iter().all(|&o| o)
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|&&o| !o).count()
    }

    pub fn has_missing(&self) -> bool {
        self.observed.iter().any(|&o| !o)
    }

    pub fn observed_in_column(&self, j: usize) -> usize {
        (0..self.n).filter(|&i| self.is_observed(i, j)).count()
    }

    /// Mask as a numeric matrix: observed 1, missing 0.
    pub fn mask_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.p, |i, j| {
            if self.is_observed(i, j) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> MaskedMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.p);
        let mut observed = Vec::with_capacity(rows.len() * self.p);
        for &i in rows {
            values.extend_from_slice(self.raw_row(i));
            observed.extend_from_slice(self.mask_row(i));
        }
        MaskedMatrix {
            n: rows.len(),
            p: self.p,
            values,
            observed,
        }
    }

    /// Append fully observed columns on the right.
    pub fn hstack_complete(&self, extra: &DMatrix<f64>) -> Result<MaskedMatrix> {
        if extra.nrows() != self.n {
            return Err(Error::Dimension(format!(
                "cannot append {} rows to {} rows",
                extra.nrows(),
                self.n
            )));
        }
        let q = self.p + extra.ncols();
        let mut values = Vec::with_capacity(self.n * q);
        let mut observed = Vec::with_capacity(self.n * q);
        for i in 0..self.n {
            values.extend_from_slice(self.raw_row(i));
            observed.extend_from_slice(self.mask_row(i));
            for j in 0..extra.ncols() {
                values.push(extra[(i, j)]);
                observed.push(true);
            }
        }
        MaskedMatrix::new(self.n, q, values, observed)
    }

    /// Keep the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> MaskedMatrix {
        let mut values = Vec::with_capacity(self.n * cols.len());
        let mut observed = Vec::with_capacity(self.n * cols.len());
        for i in 0..self.n {
            for &j in cols {
                values.push(self.values[i * self.p + j]);
                observed.push(self.observed[i * self.p + j]);
            }
        }
        MaskedMatrix {
            n: self.n,
            p: cols.len(),
            values,
            observed,
        }
    }
}

/// Masked covariates with a fully observed binary treatment and real outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    pub covariates: MaskedMatrix,
    pub treatment: Vec<bool>,
    pub outcome: Vec<f64>,
}

impl ObservationalDataset {
    pub fn new(covariates: MaskedMatrix, treatment: Vec<bool>, outcome: Vec<f64>) -> Result<Self> {
        let n = covariates.n();
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::Dimension(format!(
                "covariates have {n} rows, treatment {} and outcome {}",
                treatment.len(),
                outcome.len()
            )));
        }
        if let Some(i) = outcome.iter().position(|y| !y.is_finite()) {
            return Err(Error::InvalidInput(format!("outcome {i} is not finite")));
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn w(&self, i: usize) -> f64 {
        if self.treatment[i] {
            1.0
        } else {
            0.0
        }
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&t| t).count()
    }

    pub fn select_rows(&self, rows: &[usize]) -> ObservationalDataset {
        ObservationalDataset {
            covariates: self.covariates.select_rows(rows),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
        }
    }

    pub(crate) fn arm_rows(&self, treated: bool) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.treatment[i] == treated).collect()
    }
}

/// How nuisance predictions relate to the unit they are evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossFit {
    /// Out-of-bag forest predictions.
    Oob,
    /// Fitted without the unit (e.g. other arm, other fold).
    OutOfSample,
    /// Fitted on data that includes the unit.
    InSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceEstimates {
    pub e_hat: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
    pub crossfit: CrossFit,
}

impl NuisanceEstimates {
    pub fn n(&self) -> usize {
        self.e_hat.len()
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.e_hat.len() != n || self.mu0_hat.len() != n || self.mu1_hat.len() != n {
            return Err(Error::Dimension(format!(
                "nuisances of length ({}, {}, {}) for {n} units",
                self.e_hat.len(),
                self.mu0_hat.len(),
                self.mu1_hat.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorForm {
    Ipw,
    Aipw,
}

impl EstimatorForm {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorForm::Ipw => "ipw",
            EstimatorForm::Aipw => "aipw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ipw" => Some(EstimatorForm::Ipw),
            "aipw" => Some(EstimatorForm::Aipw),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub tau_hat: f64,
    pub std_err: f64,
    pub ci: (f64, f64),
    pub level: f64,
    pub method: String,
    pub form: EstimatorForm,
    pub n_used: usize,
    pub n_clipped: usize,
}

/// Two-sided standard normal quantile for a confidence level.
pub fn normal_quantile(level: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    std.inverse_cdf(0.5 + level / 2.0)
}

impl AteEstimate {
    /// Point estimate with a symmetric normal interval.
    pub fn normal(
        tau_hat: f64,
        std_err: f64,
        level: f64,
        method: &str,
        form: EstimatorForm,
        n_used: usize,
    ) -> Self {
        let half = normal_quantile(level) * std_err;
        Self {
            tau_hat,
            std_err,
            ci: (tau_hat - half, tau_hat + half),
            level,
            method: method.to_string(),
            form,
            n_used,
            n_clipped: 0,
        }
    }

    pub fn covers(&self, tau: f64) -> bool {
        self.ci.0 <= tau && tau <= self.ci.1
    }
}

/// `[fill | R]` with `R` observed 1 / missing 0; covariates first.
pub fn concat_mask(x: &MaskedMatrix, fill: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = (x.n(), x.p());
    if fill.shape() != (n, p) {
        return Err(Error::Dimension(format!(
            "mask is {n}x{p}, fill is {}x{}",
            fill.nrows(),
            fill.ncols()
        )));
    }
    let mut out = DMatrix::zeros(n, 2 * p);
    for i in 0..n {
        for j in 0..p {
            let f = fill[(i, j)];
            if !f.is_finite() {
                return Err(Error::InvalidInput(format!("fill cell ({i}, {j}) is not finite")));
            }
            if let Some(v) = x.get(i, j) {
                if v != f {
                    return Err(Error::InvalidInput(format!(
                        "fill disagrees with observed cell ({i}, {j})"
                    )));
                }
                out[(i, p + j)] = 1.0;
            }
            out[(i, j)] = f;
        }
    }
    Ok(out)
}

/// Rows with every covariate observed, in original order.
pub fn complete_cases(d: &ObservationalDataset) -> ObservationalDataset {
    let rows: Vec<usize> = (0..d.n()).filter(|&i| d.covariates.row_complete(i)).collect();
    d.select_rows(&rows)
}

/// Per column: proportion missing among treated and among control units.
pub fn response_pattern_summary(x: &MaskedMatrix, w: &[bool]) -> Result<Vec<(f64, f64)>> {
    if w.len() != x.n() {
        return Err(Error::Dimension(format!(
            "{} treatment entries for {} rows",
            w.len(),
            x.n()
        )));
    }
    let n1 = w.iter().filter(|&&t| t).count();
    let n0 = w.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::Empty("a treatment arm is empty".into()));
    }
    Ok((0..x.p())
        .map(|j| {
            let (mut m1, mut m0) = (0usize, 0usize);
            for (i, &t) in w.iter().enumerate() {
                if !x.is_observed(i, j) {
                    if t {
                        m1 += 1;
                    } else {
                        m0 += 1;
                    }
                }
            }
            (m1 as f64 / n1 as f64, m0 as f64 / n0 as f64)
        })
        .collect())
}
