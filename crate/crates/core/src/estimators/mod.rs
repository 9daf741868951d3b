//! Effect estimators and the end-to-end method pipelines.
//!
//! Every pipeline produces nuisance estimates (propensity and per-arm
//! outcome surfaces), clips the propensities, and combines them with IPW and
//! AIPW. Multiple-imputation pipelines do this once per completed dataset
//! and pool the results.

mod combine;
mod nuisance;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use combine::{
    aggregate_mi, aipw, clip_propensity, dr_scores, ipw, ipw_hajek, overlap_weighted_ate, DrScores,
};

use crate::data::{complete_cases, concat_mask, AteEstimate, CrossFit, EstimatorForm, MaskedMatrix, NuisanceEstimates, ObservationalDataset};
use crate::em::{EmOptions, SaemOptions};
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::impute::{fcs_multiple_impute, lambda_grid, mean_impute, select_lambda, soft_impute, FcsOptions, SoftImputeOptions};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodFamily {
    Saem,
    Grf,
    MiceParam,
    MiceGrf,
    Mf,
    MeanLoglin,
    CompleteCase,
    /// True nuisances supplied by the caller; for simulation checks only.
    Oracle,
}

impl MethodFamily {
    /// Families selectable by name.
    pub const USER: [MethodFamily; 7] = [
        MethodFamily::Saem,
        MethodFamily::Grf,
        MethodFamily::MiceParam,
        MethodFamily::MiceGrf,
        MethodFamily::Mf,
        MethodFamily::MeanLoglin,
        MethodFamily::CompleteCase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodFamily::Saem => "saem",
            MethodFamily::Grf => "grf",
            MethodFamily::MiceParam => "mice.param",
            MethodFamily::MiceGrf => "mice.grf",
            MethodFamily::Mf => "mf",
            MethodFamily::MeanLoglin => "mean.loglin",
            MethodFamily::CompleteCase => "complete.case",
            MethodFamily::Oracle => "oracle",
        }
    }

    /// Parse a user-facing method name; `oracle` is not accepted.
    pub fn parse(name: &str) -> Option<Self> {
        Self::USER.into_iter().find(|f| f.as_str() == name)
    }

    pub fn is_multiple_imputation(self) -> bool {
        matches!(self, MethodFamily::MiceParam | MethodFamily::MiceGrf)
    }
}

impl std::fmt::Display for MethodFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A method and all its tuning. Seeds of the random components (forests,
/// SAEM chains, imputations, validation splits) are derived from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub family: MethodFamily,
    pub form: EstimatorForm,
    /// Append the response mask to the covariates.
    pub include_mask: bool,
    /// Propensities are clamped to `[eta_clip, 1 - eta_clip]`.
    pub eta_clip: f64,
    /// Number of imputations (chained-equation families).
    pub m: usize,
    pub fcs_cycles: usize,
    pub forest: ForestParams,
    pub saem: SaemOptions,
    pub em: EmOptions,
    /// Monte Carlo draws per row for SAEM propensity predictions.
    pub n_mc: usize,
    pub soft_impute: SoftImputeOptions,
    /// Candidate shrinkage values; `None` uses [`lambda_grid`].
    pub lambda_grid: Option<Vec<f64>>,
    pub level: f64,
    pub seed: u64,
}

impl MethodSpec {
    pub fn new(family: MethodFamily, form: EstimatorForm) -> Self {
        Self {
            family,
            form,
            include_mask: true,
            eta_clip: 0.01,
            m: 20,
            fcs_cycles: 10,
            forest: ForestParams::default(),
            saem: SaemOptions::default(),
            em: EmOptions::default(),
            n_mc: 500,
            soft_impute: SoftImputeOptions::default(),
            lambda_grid: None,
            level: 0.95,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.eta_clip) {
            return Err(Error::Config(format!("eta_clip = {} not in [0, 0.5)", self.eta_clip)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level = {} not in (0, 1)", self.level)));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be positive".into()));
        }
        if self.n_mc == 0 {
            return Err(Error::Config("n_mc must be positive".into()));
        }
        if let Some(g) = &self.lambda_grid {
            if g.is_empty() || g.iter().any(|l| !(*l >= 0.0)) {
                return Err(Error::Config("lambda grid must be non-empty and non-negative".into()));
            }
        }
        Ok(())
    }
}

/// IPW and AIPW estimates from one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub ipw: AteEstimate,
    pub aipw: AteEstimate,
    /// Clipped nuisances, one set per completed dataset.
    pub nuisances: Vec<NuisanceEstimates>,
    pub warnings: Vec<String>,
}

impl MethodResult {
    pub fn get(&self, form: EstimatorForm) -> &AteEstimate {
        match form {
            EstimatorForm::Ipw => &self.ipw,
            EstimatorForm::Aipw => &self.aipw,
        }
    }
}

/// Clip propensities and form both estimators.
pub fn estimate_from_nuisances(
    d: &ObservationalDataset,
    nuisances: &NuisanceEstimates,
    eta_clip: f64,
    level: f64,
    method: &str,
) -> Result<(AteEstimate, AteEstimate, NuisanceEstimates)> {
    nuisances.check_len(d.n())?;
    let (e_hat, clipped) = clip_propensity(&nuisances.e_hat, eta_clip);
    if e_hat.iter().any(|e| !e.is_finite()) {
        return Err(Error::Numerical("non-finite propensity".into()));
    }
    let nu = NuisanceEstimates {
        e_hat,
        ..nuisances.clone()
    };
    let mut a = ipw(d, &nu.e_hat, level)?;
    let mut b = aipw(d, &nu, level)?;
    for (est, clip) in [(&mut a, clipped), (&mut b, clipped)] {
        est.method = method.to_string();
        est.n_clipped = clip;
    }
    Ok((a, b, nu))
}

/// Run the pipeline of `spec.family` and return both estimator forms.
pub fn estimate_both(d: &ObservationalDataset, spec: &MethodSpec) -> Result<MethodResult> {
    estimate_both_with(d, spec, None, None)
}

/// As [`estimate_both`], with true nuisances for the oracle family and
/// optional sampling clusters for the forests (used when `d` is a bootstrap
/// resample, so copies of a unit stay out of each other's out-of-bag trees).
pub fn estimate_both_with(
    d: &ObservationalDataset,
    spec: &MethodSpec,
    truth: Option<&NuisanceEstimates>,
    clusters: Option<&[u64]>,
) -> Result<MethodResult> {
    spec.validate()?;
    let name = spec.family.as_str();
    pipeline(d, spec, truth, clusters).map_err(|e| e.in_method(name))
}

/// Run one method and return the estimate of the requested form.
pub fn run_method(d: &ObservationalDataset, spec: &MethodSpec) -> Result<AteEstimate> {
    Ok(estimate_both(d, spec)?.get(spec.form).clone())
}

fn single(d: &ObservationalDataset, nu: &NuisanceEstimates, spec: &MethodSpec, warnings: Vec<String>) -> Result<MethodResult> {
    let (ipw, aipw, nu) = estimate_from_nuisances(d, nu, spec.eta_clip, spec.level, spec.family.as_str())?;
    Ok(MethodResult {
        ipw,
        aipw,
        nuisances: vec![nu],
        warnings,
    })
}

fn with_mask(x: &MaskedMatrix, fill: &nalgebra::DMatrix<f64>, include: bool) -> Result<nalgebra::DMatrix<f64>> {
    if include {
        concat_mask(x, fill)
    } else {
        Ok(fill.clone())
    }
}

const TAG_FOREST: u64 = 1;
const TAG_SAEM: u64 = 2;
const TAG_SAEM_PREDICT: u64 = 3;
const TAG_FCS: u64 = 4;
const TAG_LAMBDA: u64 = 5;

fn pipeline(
    d: &ObservationalDataset,
    spec: &MethodSpec,
    truth: Option<&NuisanceEstimates>,
    clusters: Option<&[u64]>,
) -> Result<MethodResult> {
    if d.n() == 0 {
        return Err(Error::Empty("dataset has no rows".into()));
    }
    let n1 = d.n_treated();
    if n1 == 0 || n1 == d.n() {
        return Err(Error::Empty("both treatment arms must be non-empty".into()));
    }
    let x = &d.covariates;
    match spec.family {
        MethodFamily::Oracle => {
            let t = truth.ok_or_else(|| Error::Config("the oracle needs the true nuisances".into()))?;
            let nu = NuisanceEstimates {
                crossfit: CrossFit::OutOfSample,
                ..t.clone()
            };
            single(d, &nu, spec, Vec::new())
        }
        MethodFamily::CompleteCase => {
            let cc = complete_cases(d);
            if cc.n() == 0 {
                return Err(Error::Empty("no complete cases".into()));
            }
            let n1 = cc.n_treated();
            if n1 == 0 || n1 == cc.n() {
                return Err(Error::Empty("complete cases contain a single treatment arm".into()));
            }
            let z = mean_impute(&cc.covariates)?.values;
            let nu = nuisance::parametric(&z, &cc)?;
            single(&cc, &nu, spec, Vec::new())
        }
        MethodFamily::MeanLoglin => {
            let filled = mean_impute(x)?.values;
            let z = with_mask(x, &filled, spec.include_mask)?;
            let nu = nuisance::parametric(&z, d)?;
            single(d, &nu, spec, Vec::new())
        }
        MethodFamily::Mf => {
            let grid = match &spec.lambda_grid {
                Some(g) => g.clone(),
                None => lambda_grid(x)?,
            };
            let lambda = select_lambda(x, &grid, spec.soft_impute, seed::derive(spec.seed, &[TAG_LAMBDA]))?;
            let fit = soft_impute(x, SoftImputeOptions { lambda, ..spec.soft_impute })?;
            let mut warnings = Vec::new();
            if !fit.converged {
                warnings.push(format!("soft-impute did not converge in {} iterations", fit.iterations));
            }
            let z = if spec.include_mask {
                crate::linalg::hstack(&fit.u_hat, &x.mask_matrix())
            } else {
                fit.u_hat.clone()
            };
            let nu = nuisance::parametric(&z, d)?;
            single(d, &nu, spec, warnings)
        }
        MethodFamily::Grf => {
            let features = nuisance::forest_features(x, spec.include_mask)?;
            let nu = nuisance::forests(&features, d, &spec.forest, seed::derive(spec.seed, &[TAG_FOREST]), clusters)?;
            single(d, &nu, spec, Vec::new())
        }
        MethodFamily::Saem => {
            let settings = nuisance::SaemSettings {
                saem: SaemOptions {
                    seed: seed::derive(spec.seed, &[TAG_SAEM]),
                    ..spec.saem
                },
                em: spec.em,
                n_mc: spec.n_mc,
                predict_seed: seed::derive(spec.seed, &[TAG_SAEM_PREDICT]),
                include_mask: spec.include_mask,
            };
            let (nu, warnings) = nuisance::saem_em(x, d, &settings)?;
            single(d, &nu, spec, warnings)
        }
        MethodFamily::MiceParam | MethodFamily::MiceGrf => {
            let opts = FcsOptions {
                m: spec.m,
                n_cycles: spec.fcs_cycles,
                seed: seed::derive(spec.seed, &[TAG_FCS]),
            };
            let set = fcs_multiple_impute(x, &d.treatment, &d.outcome, opts)?;
            let mut warnings = Vec::new();
            if set.ridge_fallbacks > 0 {
                warnings.push(format!("{} conditional regressions needed a ridge", set.ridge_fallbacks));
            }
            let per: Vec<Result<(AteEstimate, AteEstimate, NuisanceEstimates)>> = set
                .matrices
                .par_iter()
                .enumerate()
                .map(|(k, completed)| {
                    let z = with_mask(x, &completed.values, spec.include_mask)?;
                    let nu = if spec.family == MethodFamily::MiceParam {
                        nuisance::parametric(&z, d)?
                    } else {
                        let features = MaskedMatrix::from_dmatrix(&crate::linalg::drop_constant_columns(&z))?;
                        let s = seed::derive(spec.seed, &[TAG_FOREST, k as u64]);
                        nuisance::forests(&features, d, &spec.forest, s, clusters)?
                    };
                    estimate_from_nuisances(d, &nu, spec.eta_clip, spec.level, spec.family.as_str())
                })
                .collect();
            let mut ipws = Vec::with_capacity(per.len());
            let mut aipws = Vec::with_capacity(per.len());
            let mut nuisances = Vec::with_capacity(per.len());
            for r in per {
                let (a, b, nu) = r?;
                ipws.push(a);
                aipws.push(b);
                nuisances.push(nu);
            }
            Ok(MethodResult {
                ipw: aggregate_mi(&ipws)?,
                aipw: aggregate_mi(&aipws)?,
                nuisances,
                warnings,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate, Mechanism, Model, Regime, ScenarioConfig};

    #[test]
    fn names_round_trip() {
        for f in MethodFamily::USER {
            assert_eq!(MethodFamily::parse(f.as_str()), Some(f));
        }
        assert_eq!(MethodFamily::parse("oracle"), None);
        assert_eq!(MethodFamily::parse("mice"), None);
    }

    #[test]
    fn spec_validation() {
        let mut s = MethodSpec::new(MethodFamily::Grf, EstimatorForm::Aipw);
        assert!(s.validate().is_ok());
        s.eta_clip = 0.5;
        assert!(s.validate().is_err());
    }

    fn small(mechanism: Mechanism) -> ObservationalDataset {
        let cfg = ScenarioConfig {
            model: Model::Model1,
            n: 400,
            mechanism,
            regime: Regime::Despite,
            seed: 3,
            ..Default::default()
        };
        generate(&cfg).unwrap().dataset
    }

    #[test]
    fn every_family_runs() {
        let d = small(Mechanism::Mcar);
        for family in MethodFamily::USER {
            let mut spec = MethodSpec::new(family, EstimatorForm::Aipw);
            spec.m = 3;
            spec.forest.n_trees = 20;
            spec.saem.max_iter = 60;
            spec.n_mc = 50;
            if family == MethodFamily::CompleteCase {
                // 400 * 0.7^10 is about 11 rows
                continue;
            }
            let r = estimate_both(&d, &spec).unwrap_or_else(|e| panic!("{family}: {e}"));
            assert!(r.ipw.tau_hat.is_finite() && r.aipw.tau_hat.is_finite(), "{family}");
            assert_eq!(r.aipw.method, family.as_str());
        }
    }

    #[test]
    fn complete_case_without_complete_rows() {
        let rows = vec![vec![Some(1.0), None], vec![None, Some(2.0)], vec![Some(0.5), None], vec![None, Some(1.0)]];
        let x = MaskedMatrix::from_rows(&rows).unwrap();
        let d = ObservationalDataset::new(x, vec![true, false, true, false], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let err = run_method(&d, &MethodSpec::new(MethodFamily::CompleteCase, EstimatorForm::Ipw)).unwrap_err();
        assert!(err.to_string().starts_with("complete.case"));
    }

    #[test]
    fn oracle_requires_truth() {
        let d = small(Mechanism::Mcar);
        assert!(run_method(&d, &MethodSpec::new(MethodFamily::Oracle, EstimatorForm::Aipw)).is_err());
    }

    #[test]
    fn score_mean_equals_aipw() {
        let d = small(Mechanism::Mcar);
        let spec = MethodSpec::new(MethodFamily::MeanLoglin, EstimatorForm::Aipw);
        let r = estimate_both(&d, &spec).unwrap();
        let s = dr_scores(&d, &r.nuisances[0]).unwrap();
        assert_eq!(s.mean().to_bits(), r.aipw.tau_hat.to_bits());
    }
}
