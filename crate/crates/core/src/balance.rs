//! Covariate balance between treatment arms: standardized mean differences
//! before and after weighting, on covariates and on the response pattern.

use serde::Serialize;

use crate::data::{MaskedMatrix, ObservationalDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Smd {
    pub column: usize,
    pub before: f64,
    pub after: f64,
    /// Pooled standard deviation was zero; both differences are reported as 0.
    pub zero_sd: bool,
}

/// Inverse propensity weights `1/e` (treated) and `1/(1-e)` (control).
pub fn ipw_weights(treatment: &[bool], e_hat: &[f64]) -> Vec<f64> {
    treatment
        .iter()
        .zip(e_hat)
        .map(|(&t, &e)| if t { 1.0 / e } else { 1.0 / (1.0 - e) })
        .collect()
}

fn weighted_mean(pairs: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let (mut s, mut w) = (0.0, 0.0);
    for (v, wt) in pairs {
        s += v * wt;
        w += wt;
    }
    (w > 0.0).then(|| s / w)
}

fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Standardized mean differences per column of `x`, using observed cells
/// only. The scale is the unweighted pooled standard deviation
/// `sqrt((var_treated + var_control) / 2)`.
pub fn smd_balance(x: &MaskedMatrix, treatment: &[bool], weights: &[f64]) -> Result<Vec<Smd>> {
    let n = x.n();
    if treatment.len() != n || weights.len() != n {
        return Err(Error::Dimension(format!("{n} rows, {} treatments, {} weights", treatment.len(), weights.len())));
    }
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidInput(format!("weight {i} is not a non-negative number")));
    }
    let mut out = Vec::with_capacity(x.p());
    for j in 0..x.p() {
        let cells = |arm: bool| -> Vec<(f64, f64)> {
            (0..n)
                .filter(|&i| treatment[i] == arm)
                .filter_map(|i| x.get(i, j).map(|v| (v, weights[i])))
                .collect()
        };
        let (t, c) = (cells(true), cells(false));
        let vt: Vec<f64> = t.iter().map(|p| p.0).collect();
        let vc: Vec<f64> = c.iter().map(|p| p.0).collect();
        let sd = ((variance(&vt) + variance(&vc)) / 2.0).sqrt();
        if t.is_empty() || c.is_empty() || sd == 0.0 {
            out.push(Smd { column: j, before: 0.0, after: 0.0, zero_sd: true });
            continue;
        }
        let diff = |tw: Option<f64>, cw: Option<f64>| match (tw, cw) {
            (Some(a), Some(b)) => (a - b) / sd,
            _ => 0.0,
        };
        let before = diff(
            weighted_mean(t.iter().map(|p| (p.0, 1.0))),
            weighted_mean(c.iter().map(|p| (p.0, 1.0))),
        );
        let after = diff(weighted_mean(t.iter().copied()), weighted_mean(c.iter().copied()));
        out.push(Smd { column: j, before, after, zero_sd: false });
    }
    Ok(out)
}

/// Balance of the missingness indicators (1 observed, 0 missing).
pub fn mask_balance(d: &ObservationalDataset, weights: &[f64]) -> Result<Vec<Smd>> {
    let mask = MaskedMatrix::from_dmatrix(&d.covariates.mask_matrix())?;
    smd_balance(&mask, &d.treatment, weights)
}
