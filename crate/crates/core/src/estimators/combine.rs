//! Weighting estimators that turn nuisance predictions into an effect
//! estimate.

use crate::data::{AteEstimate, EstimatorForm, NuisanceEstimates, ObservationalDataset, CrossFit};
use crate::error::{Error, Result};
use crate::linalg::{mean, sd};

/// Clamp each propensity into `[eta_clip, 1 - eta_clip]`; returns the
/// clipped vector and how many entries moved.
pub fn clip_propensity(e_hat: &[f64], eta_clip: f64) -> (Vec<f64>, usize) {
    let (lo, hi) = (eta_clip, 1.0 - eta_clip);
    let mut count = 0;
    let out = e_hat
        .iter()
        .map(|&e| {
            let c = e.clamp(lo, hi);
            if c != e {
                count += 1;
            }
            c
        })
        .collect();
    (out, count)
}

fn check_propensities(e_hat: &[f64]) -> Result<()> {
    if let Some(i) = e_hat.iter().position(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidInput(format!("propensity {} at unit {i} is not in (0, 1)", e_hat[i])));
    }
    Ok(())
}

fn summand_estimate(terms: &[f64], level: f64, method: &str, form: EstimatorForm) -> AteEstimate {
    let n = terms.len();
    let se = if n > 1 { sd(terms) / (n as f64).sqrt() } else { 0.0 };
    AteEstimate::normal(mean(terms), se, level, method, form, n)
}

/// Horvitz-Thompson inverse propensity weighting.
pub fn ipw(d: &ObservationalDataset, e_hat: &[f64], level: f64) -> Result<AteEstimate> {
    if d.n() == 0 {
        return Err(Error::Empty("IPW on an empty dataset".into()));
    }
    if e_hat.len() != d.n() {
        return Err(Error::Dimension(format!("{} units, {} propensities", d.n(), e_hat.len())));
    }
    check_propensities(e_hat)?;
    let terms: Vec<f64> = (0..d.n())
        .map(|i| {
            let (w, y, e) = (d.w(i), d.outcome[i], e_hat[i]);
            w * y / e - (1.0 - w) * y / (1.0 - e)
        })
        .collect();
    Ok(summand_estimate(&terms, level, "ipw", EstimatorForm::Ipw))
}

/// IPW with weights normalized to sum to one within each arm.
pub fn ipw_hajek(d: &ObservationalDataset, e_hat: &[f64], level: f64) -> Result<AteEstimate> {
    if d.n() == 0 {
        return Err(Error::Empty("IPW on an empty dataset".into()));
    }
    if e_hat.len() != d.n() {
        return Err(Error::Dimension(format!("{} units, {} propensities", d.n(), e_hat.len())));
    }
    check_propensities(e_hat)?;
    let (mut s1, mut w1, mut s0, mut w0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..d.n() {
        if d.treatment[i] {
            s1 += d.outcome[i] / e_hat[i];
            w1 += 1.0 / e_hat[i];
        } else {
            s0 += d.outcome[i] / (1.0 - e_hat[i]);
            w0 += 1.0 / (1.0 - e_hat[i]);
        }
    }
    if w1 == 0.0 || w0 == 0.0 {
        return Err(Error::Empty("one treatment arm is empty".into()));
    }
    let (m1, m0) = (s1 / w1, s0 / w0);
    // linearization: residuals about each arm's weighted mean
    let n = d.n() as f64;
    let terms: Vec<f64> = (0..d.n())
        .map(|i| {
            let y = d.outcome[i];
            if d.treatment[i] {
                n * (y - m1) / (e_hat[i] * w1)
            } else {
                -n * (y - m0) / ((1.0 - e_hat[i]) * w0)
            }
        })
        .collect();
    let se = if d.n() > 1 { sd(&terms) / n.sqrt() } else { 0.0 };
    Ok(AteEstimate::normal(m1 - m0, se, level, "ipw.hajek", EstimatorForm::Ipw, d.n()))
}

/// Per-unit doubly robust scores; their mean is the AIPW estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DrScores {
    pub scores: Vec<f64>,
    pub crossfit: CrossFit,
    /// Set when the nuisances were fitted on the units they score.
    pub in_sample_warning: bool,
}

impl DrScores {
    pub fn mean(&self) -> f64 {
        mean(&self.scores)
    }
}

pub fn dr_scores(d: &ObservationalDataset, nuisances: &NuisanceEstimates) -> Result<DrScores> {
    nuisances.check_len(d.n())?;
    check_propensities(&nuisances.e_hat)?;
    let scores = (0..d.n())
        .map(|i| {
            let (w, y, e) = (d.w(i), d.outcome[i], nuisances.e_hat[i]);
            let (m0, m1) = (nuisances.mu0_hat[i], nuisances.mu1_hat[i]);
            m1 - m0 + w * (y - m1) / e - (1.0 - w) * (y - m0) / (1.0 - e)
        })
        .collect();
    Ok(DrScores {
        scores,
        crossfit: nuisances.crossfit,
        in_sample_warning: nuisances.crossfit == CrossFit::InSample,
    })
}

/// Augmented IPW: mean of the doubly robust scores with a normal interval.
pub fn aipw(d: &ObservationalDataset, nuisances: &NuisanceEstimates, level: f64) -> Result<AteEstimate> {
    if d.n() == 0 {
        return Err(Error::Empty("AIPW on an empty dataset".into()));
    }
    let s = dr_scores(d, nuisances)?;
    Ok(summand_estimate(&s.scores, level, "aipw", EstimatorForm::Aipw))
}

/// Effect on the overlap population: weights `1 - e` for treated and `e`
/// for control units.
pub fn overlap_weighted_ate(d: &ObservationalDataset, e_hat: &[f64], level: f64) -> Result<AteEstimate> {
    if e_hat.len() != d.n() {
        return Err(Error::Dimension(format!("{} units, {} propensities", d.n(), e_hat.len())));
    }
    let (mut s1, mut w1, mut s0, mut w0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..d.n() {
        let (e, y) = (e_hat[i], d.outcome[i]);
        if d.treatment[i] {
            s1 += y * (1.0 - e);
            w1 += 1.0 - e;
        } else {
            s0 += y * e;
            w0 += e;
        }
    }
    if w1 == 0.0 || w0 == 0.0 {
        return Err(Error::InvalidInput("overlap weights sum to zero in one arm".into()));
    }
    let (m1, m0) = (s1 / w1, s0 / w0);
    let n = d.n() as f64;
    let terms: Vec<f64> = (0..d.n())
        .map(|i| {
            let (e, y) = (e_hat[i], d.outcome[i]);
            if d.treatment[i] {
                n * (1.0 - e) * (y - m1) / w1
            } else {
                -n * e * (y - m0) / w0
            }
        })
        .collect();
    let se = if d.n() > 1 { sd(&terms) / n.sqrt() } else { 0.0 };
    Ok(AteEstimate::normal(m1 - m0, se, level, "overlap", EstimatorForm::Ipw, d.n()))
}

/// Combine per-imputation estimates: mean point estimate and total
/// variance `mean(se^2) + (1 + 1/M) * between-imputation variance`.
pub fn aggregate_mi(estimates: &[AteEstimate]) -> Result<AteEstimate> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::Empty("no estimates to aggregate".into()))?;
    if estimates.iter().any(|e| e.form != first.form || e.method != first.method) {
        return Err(Error::InvalidInput("estimates come from different methods".into()));
    }
    if estimates.len() == 1 {
        return Ok(first.clone());
    }
    let m = estimates.len() as f64;
    let points: Vec<f64> = estimates.iter().map(|e| e.tau_hat).collect();
    let within = estimates.iter().map(|e| e.std_err * e.std_err).sum::<f64>() / m;
    let between = sd(&points).powi(2);
    let se = (within + (1.0 + 1.0 / m) * between).sqrt();
    let clipped = estimates.iter().map(|e| e.n_clipped).sum::<usize>() / estimates.len();
    let mut out = AteEstimate::normal(mean(&points), se, first.level, &first.method, first.form, first.n_used);
    out.n_clipped = clipped;
    Ok(out)
}
