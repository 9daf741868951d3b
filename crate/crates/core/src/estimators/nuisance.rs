//! Nuisance fits behind each method family.

use nalgebra::DMatrix;

use crate::data::{CrossFit, MaskedMatrix, NuisanceEstimates, ObservationalDataset};
use crate::em::{em_linear_predict, fit_em_regression, fit_saem_logistic, saem_predict, EmOptions, SaemOptions};
use crate::error::{Error, Result};
use crate::forest::{fit_mia_forest_clustered, oob_predict, predict, ForestParams};
use crate::glm::{logistic, ols, LogisticOptions};
use crate::linalg::{non_constant_columns, select_columns, select_rows};

fn treatment_f64(d: &ObservationalDataset) -> Vec<f64> {
    (0..d.n()).map(|i| d.w(i)).collect()
}

/// Logistic propensity and per-arm least squares on a complete design.
/// Columns that are constant over the fitting rows are dropped.
pub(crate) fn parametric(z: &DMatrix<f64>, d: &ObservationalDataset) -> Result<NuisanceEstimates> {
    let keep = non_constant_columns(z);
    let zc = select_columns(z, &keep);
    let w = treatment_f64(d);
    let e_hat = logistic(&zc, &w, LogisticOptions::default())?.predict_proba(&zc);
    let mut mu = [Vec::new(), Vec::new()];
    for (slot, treated) in [(0, false), (1, true)] {
        let rows = d.arm_rows(treated);
        let za = select_rows(&zc, &rows);
        let keep_a = non_constant_columns(&za);
        if rows.len() <= keep_a.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} arm has {} units for {} regressors",
                if treated { "treated" } else { "control" },
                rows.len(),
                keep_a.len()
            )));
        }
        let ya: Vec<f64> = rows.iter().map(|&i| d.outcome[i]).collect();
        let fit = ols(&select_columns(&za, &keep_a), &ya)?;
        mu[slot] = fit.predict(&select_columns(&zc, &keep_a));
    }
    let [mu0_hat, mu1_hat] = mu;
    Ok(NuisanceEstimates {
        e_hat,
        mu0_hat,
        mu1_hat,
        crossfit: CrossFit::InSample,
    })
}

/// Propensity forest (out-of-bag) and one outcome forest per arm: a unit's
/// own-arm prediction is out-of-bag, its other-arm prediction comes from a
/// forest that never saw it.
pub(crate) fn forests(
    features: &MaskedMatrix,
    d: &ObservationalDataset,
    params: &ForestParams,
    base_seed: u64,
    clusters: Option<&[u64]>,
) -> Result<NuisanceEstimates> {
    let n = d.n();
    let w = treatment_f64(d);
    let e_params = ForestParams {
        seed: crate::seed::derive(base_seed, &[0]),
        ..params.clone()
    };
    let e_forest = fit_mia_forest_clustered(features, &w, &e_params, clusters)?;
    let e_hat = oob_predict(&e_forest, features)?.predictions;

    let mut mu = [vec![0.0; n], vec![0.0; n]];
    for (slot, treated) in [(0usize, false), (1usize, true)] {
        let own = d.arm_rows(treated);
        let other = d.arm_rows(!treated);
        let x_own = features.select_rows(&own);
        let y_own: Vec<f64> = own.iter().map(|&i| d.outcome[i]).collect();
        let c_own: Option<Vec<u64>> = clusters.map(|c| own.iter().map(|&i| c[i]).collect());
        let p = ForestParams {
            seed: crate::seed::derive(base_seed, &[1 + slot as u64]),
            ..params.clone()
        };
        let forest = fit_mia_forest_clustered(&x_own, &y_own, &p, c_own.as_deref())?;
        let oob = oob_predict(&forest, &x_own)?.predictions;
        for (k, &i) in own.iter().enumerate() {
            mu[slot][i] = oob[k];
        }
        let cross = predict(&forest, &features.select_rows(&other))?;
        for (k, &i) in other.iter().enumerate() {
            mu[slot][i] = cross[k];
        }
    }
    let [mu0_hat, mu1_hat] = mu;
    Ok(NuisanceEstimates {
        e_hat,
        mu0_hat,
        mu1_hat,
        crossfit: CrossFit::Oob,
    })
}

/// Covariate columns plus the mask columns (1 observed, 0 missing) that
/// vary over `rows`.
fn covariates_and_mask(x: &MaskedMatrix, rows: &[usize], include_mask: bool) -> Result<MaskedMatrix> {
    if !include_mask {
        return Ok(x.clone());
    }
    let mask = x.mask_matrix();
    let varying: Vec<usize> = (0..x.p())
        .filter(|&j| {
            let first = rows.first().map(|&i| mask[(i, j)]);
            rows.iter().any(|&i| Some(mask[(i, j)]) != first)
        })
        .collect();
    x.hstack_complete(&select_columns(&mask, &varying))
}

pub(crate) struct SaemSettings {
    pub saem: SaemOptions,
    pub em: EmOptions,
    pub n_mc: usize,
    pub predict_seed: u64,
    pub include_mask: bool,
}

/// SAEM logistic propensity and per-arm EM Gaussian outcome regressions.
pub(crate) fn saem_em(x: &MaskedMatrix, d: &ObservationalDataset, s: &SaemSettings) -> Result<(NuisanceEstimates, Vec<String>)> {
    let all: Vec<usize> = (0..d.n()).collect();
    let features = covariates_and_mask(x, &all, s.include_mask)?;
    let model = fit_saem_logistic(&features, &d.treatment, s.saem)?;
    let e_hat = saem_predict(&model, &features, s.n_mc, s.predict_seed)?;
    let mut mu = [Vec::new(), Vec::new()];
    for (slot, treated) in [(0usize, false), (1usize, true)] {
        let rows = d.arm_rows(treated);
        // mask columns constant within the arm would make the Gaussian singular
        let f_all = covariates_and_mask(x, &rows, s.include_mask)?;
        let f_arm = f_all.select_rows(&rows);
        let y: Vec<f64> = rows.iter().map(|&i| d.outcome[i]).collect();
        let joint = fit_em_regression(&f_arm, &y, s.em)?;
        mu[slot] = em_linear_predict(&joint, &f_all)?;
    }
    let [mu0_hat, mu1_hat] = mu;
    Ok((
        NuisanceEstimates {
            e_hat,
            mu0_hat,
            mu1_hat,
            crossfit: CrossFit::InSample,
        },
        model.warnings,
    ))
}

/// Masked features for forests: covariates with `NaN` for missing cells,
/// optionally followed by the non-constant mask columns.
pub(crate) fn forest_features(x: &MaskedMatrix, include_mask: bool) -> Result<MaskedMatrix> {
    let all: Vec<usize> = (0..x.n()).collect();
    covariates_and_mask(x, &all, include_mask)
}
