//! Seedable generators for the simulation designs: four covariate models,
//! two missingness mechanisms and treatment/outcome assignment under three
//! unconfoundedness regimes.
//!
//! Randomness is split in two levels. Scenario-level quantities (default
//! coefficients, the Model 3 loading matrix, Model 4 network weights, the
//! overlap rescaling) depend only on [`ScenarioConfig::seed`]. Per-replication
//! draws (covariates, mask, treatment, outcome noise) additionally depend on
//! [`ScenarioConfig::replication`], each from its own stream.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{MaskedMatrix, ObservationalDataset};
use crate::error::{Error, Result};
use crate::glm::sigmoid;
use crate::seed;

const STREAM_COVARIATES: u64 = 1;
const STREAM_MASK: u64 = 2;
const STREAM_TREATMENT: u64 = 3;
const STREAM_OUTCOME: u64 = 4;
const STREAM_COEF: u64 = 10;
const STREAM_MODEL: u64 = 11;
const STREAM_PILOT: u64 = 12;

const PILOT_SIZE: usize = 20_000;
/// logit(0.95): default coefficients keep 99% of true propensities inside (0.05, 0.95).
const OVERLAP_LOGIT: f64 = 2.944_438_979_166_440_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Model1,
    Model2,
    Model3,
    Model4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Informative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Unconfoundedness given the complete covariates.
    Complete,
    /// Unconfoundedness given the masked covariates `X*`.
    Despite,
    /// Unconfoundedness given latent variables (Models 2-4).
    Latent,
}

macro_rules! str_enum {
    ($t:ty, $($v:path => $s:literal),+) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $($v => $s),+ }
            }
            pub fn parse(s: &str) -> Option<Self> {
                match s.to_ascii_lowercase().as_str() { $($s => Some($v),)+ _ => None }
            }
        }
        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

str_enum!(Model, Model::Model1 => "model1", Model::Model2 => "model2", Model::Model3 => "model3", Model::Model4 => "model4");
str_enum!(Mechanism, Mechanism::Mcar => "mcar", Mechanism::Informative => "informative");
str_enum!(Regime, Regime::Complete => "complete", Regime::Despite => "despite", Regime::Latent => "latent");

/// Gaussian mixture for Model 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureParams {
    pub proportions: Vec<f64>,
    /// One mean vector per class.
    pub means: Vec<Vec<f64>>,
    /// One row-major `p x p` covariance per class.
    pub covariances: Vec<Vec<f64>>,
}

impl MixtureParams {
    /// Three classes with proportions (0.3, 0.4, 0.3), means -2, 0, +2 in
    /// every coordinate and identity covariances.
    pub fn default_for(p: usize) -> Self {
        let identity: Vec<f64> = (0..p * p).map(|k| if k % (p + 1) == 0 { 1.0 } else { 0.0 }).collect();
        Self {
            proportions: vec![0.3, 0.4, 0.3],
            means: vec![vec![-2.0; p], vec![0.0; p], vec![2.0; p]],
            covariances: vec![identity; 3],
        }
    }

    pub fn k(&self) -> usize {
        self.proportions.len()
    }

    fn validate(&self, p: usize) -> Result<()> {
        let k = self.k();
        if k == 0 || self.means.len() != k || self.covariances.len() != k {
            return Err(Error::Config("mixture needs matching proportions, means and covariances".into()));
        }
        let total: f64 = self.proportions.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.proportions.iter().any(|&q| q < 0.0) {
            return Err(Error::Config(format!("mixture proportions sum to {total}, expected 1")));
        }
        if self.means.iter().any(|m| m.len() != p) || self.covariances.iter().any(|c| c.len() != p * p) {
            return Err(Error::Config(format!("mixture components must have dimension {p}")));
        }
        Ok(())
    }

    fn population_mean(&self) -> Vec<f64> {
        let p = self.means[0].len();
        (0..p)
            .map(|j| self.proportions.iter().zip(&self.means).map(|(q, m)| q * m[j]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: Model,
    pub n: usize,
    pub p: usize,
    /// Latent dimension (Models 3 and 4).
    pub d: usize,
    pub eta_missing: f64,
    pub mechanism: Mechanism,
    pub regime: Regime,
    pub tau: f64,
    pub alpha0: f64,
    pub alpha: Option<Vec<f64>>,
    pub beta0: f64,
    pub beta: Option<Vec<f64>>,
    /// Coefficients on missingness indicators in the despite-missingness regime.
    pub mask_alpha: Option<Vec<f64>>,
    pub mask_beta: Option<Vec<f64>>,
    pub sigma: f64,
    pub seed: u64,
    pub replication: u64,
    pub mixture: Option<MixtureParams>,
    /// Model 4 variance log-slope, one value per hidden unit.
    pub model4_gamma: f64,
    pub model4_delta: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            model: Model::Model1,
            n: 1000,
            p: 10,
            d: 3,
            eta_missing: 0.3,
            mechanism: Mechanism::Mcar,
            regime: Regime::Complete,
            tau: 1.0,
            alpha0: 0.0,
            alpha: None,
            beta0: 0.0,
            beta: None,
            mask_alpha: None,
            mask_beta: None,
            sigma: 1.0,
            seed: 0,
            replication: 0,
            mixture: None,
            model4_gamma: 0.1,
            model4_delta: 0.0,
        }
    }
}

const DLVM_HIDDEN: usize = 5;

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.p == 0 {
            return Err(Error::Config("p must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.eta_missing) {
            return Err(Error::Config(format!("eta_missing = {} not in [0, 1)", self.eta_missing)));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config("sigma must be nonnegative".into()));
        }
        if self.mechanism == Mechanism::Informative {
            if self.p < 5 {
                return Err(Error::Config("informative missingness needs p >= 5".into()));
            }
            if self.informative_rate() > 1.0 {
                return Err(Error::Config(format!(
                    "informative missingness needs eta_missing * p / 5 <= 1, got {}",
                    self.informative_rate()
                )));
            }
        }
        if matches!(self.model, Model::Model3 | Model::Model4) && (self.d == 0 || self.d > self.p) {
            return Err(Error::Config(format!("latent dimension d = {} must be in 1..={}", self.d, self.p)));
        }
        if self.model == Model::Model1 && self.regime == Regime::Latent {
            return Err(Error::Config("model1 has no latent variables".into()));
        }
        if let Some(m) = &self.mixture {
            m.validate(self.p)?;
        }
        let k = self.coef_len();
        for (name, v) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            if let Some(v) = v {
                if v.len() != k {
                    return Err(Error::Config(format!("{name} has length {}, expected {k}", v.len())));
                }
            }
        }
        for (name, v) in [("mask_alpha", &self.mask_alpha), ("mask_beta", &self.mask_beta)] {
            if let Some(v) = v {
                if v.len() != self.p {
                    return Err(Error::Config(format!("{name} has length {}, expected {}", v.len(), self.p)));
                }
            }
        }
        Ok(())
    }

    /// Per-cell missingness probability above the median under the
    /// informative mechanism.
    pub fn informative_rate(&self) -> f64 {
        self.eta_missing * self.p as f64 / 5.0
    }

    fn coef_len(&self) -> usize {
        match (self.model, self.regime) {
            (Model::Model3 | Model::Model4, Regime::Latent) => self.d,
            _ => self.p,
        }
    }

    fn uses_class_coefficients(&self) -> bool {
        self.model == Model::Model2 && self.regime == Regime::Latent
    }

    fn mixture_or_default(&self) -> MixtureParams {
        self.mixture.clone().unwrap_or_else(|| MixtureParams::default_for(self.p))
    }

    fn rep_rng(&self, stream: u64) -> ChaCha8Rng {
        seed::rng(self.seed, &[0x5245_5031, self.replication, stream])
    }
}

/// Model 1 covariance: unit diagonal, 0.6 off-diagonal.
pub fn model1_covariance(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { 0.6 })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn cholesky_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(cov.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite("covariance".into()))
}

fn sample_mvn_rows(
    rng: &mut ChaCha8Rng,
    n: usize,
    mean: &[f64],
    chol: &DMatrix<f64>,
    out: &mut DMatrix<f64>,
    row0: usize,
) {
    let p = mean.len();
    let mut z = vec![0.0; p];
    for i in 0..n {
        z.iter_mut().for_each(|v| *v = normal(rng));
        for j in 0..p {
            let mut s = mean[j];
            for k in 0..=j {
                s += chol[(j, k)] * z[k];
            }
            out[(row0 + i, j)] = s;
        }
    }
}

/// Scenario-level parameters, fixed by the scenario seed.
#[derive(Debug, Clone)]
pub struct ScenarioParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub mask_alpha: Vec<f64>,
    pub mask_beta: Vec<f64>,
    /// Model 2 latent regime: per-class coefficient vectors.
    pub class_alpha: Vec<Vec<f64>>,
    pub class_beta: Vec<Vec<f64>>,
    /// Model 3: `p x d` loadings. Model 4: `p x 5` output weights.
    pub v: Option<DMatrix<f64>>,
    /// Model 4 hidden layer `5 x d`, offsets `a` (5) and `b` (p).
    pub w_hidden: Option<DMatrix<f64>>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Population column means of the covariates.
    pub population_mean: Vec<f64>,
    /// Factor applied to the default treatment coefficients for overlap.
    pub overlap_scale: f64,
}

fn uniform_vec(rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(lo..hi)).collect()
}

fn model_weights(cfg: &ScenarioConfig) -> (Option<DMatrix<f64>>, Option<DMatrix<f64>>, Vec<f64>, Vec<f64>) {
    let mut rng = seed::rng(cfg.seed, &[STREAM_MODEL]);
    match cfg.model {
        Model::Model3 => {
            let v = DMatrix::from_fn(cfg.p, cfg.d, |_, _| normal(&mut rng));
            (Some(v), None, vec![], vec![])
        }
        Model::Model4 => {
            let v = DMatrix::from_fn(cfg.p, DLVM_HIDDEN, |_, _| normal(&mut rng));
            let w = DMatrix::from_fn(DLVM_HIDDEN, cfg.d, |_, _| rng.random_range(0.0..1.0));
            let a = uniform_vec(&mut rng, DLVM_HIDDEN, 0.0, 1.0);
            let b = (0..cfg.p).map(|_| normal(&mut rng)).collect();
            (Some(v), Some(w), a, b)
        }
        _ => (None, None, vec![], vec![]),
    }
}

/// Covariates and latent draws for one replication, given scenario weights.
struct Covariates {
    x: DMatrix<f64>,
    latent: Option<DMatrix<f64>>,
    classes: Option<Vec<usize>>,
}

fn draw_covariates(cfg: &ScenarioConfig, params_v: Option<&DMatrix<f64>>, params_w: Option<&DMatrix<f64>>,
    a: &[f64], b: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Covariates> {
    match cfg.model {
        Model::Model1 => {
            let chol = cholesky_factor(&model1_covariance(cfg.p))?;
            let mut x = DMatrix::zeros(n, cfg.p);
            sample_mvn_rows(rng, n, &vec![1.0; cfg.p], &chol, &mut x, 0);
            Ok(Covariates { x, latent: None, classes: None })
        }
        Model::Model2 => {
            let (x, c) = draw_mixture(&cfg.mixture_or_default(), cfg.p, n, rng)?;
            Ok(Covariates { x, latent: None, classes: Some(c) })
        }
        Model::Model3 => {
            let v = params_v.expect("model3 loadings");
            let u = DMatrix::from_fn(n, cfg.d, |_, _| 0.0);
            let mut u = u;
            for i in 0..n {
                for k in 0..cfg.d {
                    u[(i, k)] = normal(rng);
                }
            }
            let x = &u * v.transpose();
            Ok(Covariates { x, latent: Some(u), classes: None })
        }
        Model::Model4 => {
            let v = params_v.expect("model4 output weights");
            let w = params_w.expect("model4 hidden weights");
            let mut codes = DMatrix::zeros(n, cfg.d);
            let mut x = DMatrix::zeros(n, cfg.p);
            let mut h = vec![0.0; DLVM_HIDDEN];
            for i in 0..n {
                for k in 0..cfg.d {
                    codes[(i, k)] = normal(rng);
                }
                for (r, hr) in h.iter_mut().enumerate() {
                    *hr = a[r] + (0..cfg.d).map(|k| w[(r, k)] * codes[(i, k)]).sum::<f64>();
                }
                let log_var = cfg.model4_gamma * h.iter().sum::<f64>() + cfg.model4_delta;
                let sd = (0.5 * log_var).exp();
                for j in 0..cfg.p {
                    let mu = b[j] + (0..DLVM_HIDDEN).map(|r| v[(j, r)] * h[r].tanh()).sum::<f64>();
                    x[(i, j)] = mu + sd * normal(rng);
                }
            }
            Ok(Covariates { x, latent: Some(codes), classes: None })
        }
    }
}

fn draw_mixture(m: &MixtureParams, p: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<(DMatrix<f64>, Vec<usize>)> {
    m.validate(p)?;
    let chols = m
        .covariances
        .iter()
        .map(|c| cholesky_factor(&DMatrix::from_row_slice(p, p, c)))
        .collect::<Result<Vec<_>>>()?;
    let mut x = DMatrix::zeros(n, p);
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut c = m.k() - 1;
        for (k, q) in m.proportions.iter().enumerate() {
            acc += q;
            if u < acc {
                c = k;
                break;
            }
        }
        classes.push(c);
        sample_mvn_rows(rng, 1, &m.means[c], &chols[c], &mut x, i);
    }
    Ok((x, classes))
}

/// Model 1: rows i.i.d. `N(1, Sigma)` with unit variances and 0.6 correlations.
pub fn gen_model1(cfg: &ScenarioConfig) -> Result<DMatrix<f64>> {
    let mut rng = cfg.rep_rng(STREAM_COVARIATES);
    let cfg1 = ScenarioConfig { model: Model::Model1, ..cfg.clone() };
    Ok(draw_covariates(&cfg1, None, None, &[], &[], cfg.n, &mut rng)?.x)
}

/// Model 2: latent classes, then class-conditional Gaussians.
pub fn gen_model2(cfg: &ScenarioConfig, class_params: &MixtureParams) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let mut rng = cfg.rep_rng(STREAM_COVARIATES);
    draw_mixture(class_params, cfg.p, cfg.n, &mut rng)
}

/// Model 3: `X = U V^T` with `U` per replication and `V` per scenario.
pub fn gen_model3(cfg: &ScenarioConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let cfg3 = ScenarioConfig { model: Model::Model3, ..cfg.clone() };
    cfg3.validate()?;
    let (v, _, _, _) = model_weights(&cfg3);
    let mut rng = cfg.rep_rng(STREAM_COVARIATES);
    let cov = draw_covariates(&cfg3, v.as_ref(), None, &[], &[], cfg.n, &mut rng)?;
    Ok((cov.x, cov.latent.expect("latent factors")))
}

/// Model 4: Gaussian codes pushed through a one-hidden-layer network.
pub fn gen_model4(cfg: &ScenarioConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let cfg4 = ScenarioConfig { model: Model::Model4, ..cfg.clone() };
    cfg4.validate()?;
    let (v, w, a, b) = model_weights(&cfg4);
    let mut rng = cfg.rep_rng(STREAM_COVARIATES);
    let cov = draw_covariates(&cfg4, v.as_ref(), w.as_ref(), &a, &b, cfg.n, &mut rng)?;
    Ok((cov.x, cov.latent.expect("codes")))
}

/// Model 4 conditional mean and per-coordinate variance for a code vector.
pub fn model4_conditional(params: &ScenarioParams, cfg: &ScenarioConfig, code: &[f64]) -> (Vec<f64>, f64) {
    let v = params.v.as_ref().expect("model4 weights");
    let w = params.w_hidden.as_ref().expect("model4 weights");
    let h: Vec<f64> = (0..DLVM_HIDDEN)
        .map(|r| params.a[r] + (0..cfg.d).map(|k| w[(r, k)] * code[k]).sum::<f64>())
        .collect();
    let mean = (0..cfg.p)
        .map(|j| params.b[j] + (0..DLVM_HIDDEN).map(|r| v[(j, r)] * h[r].tanh()).sum::<f64>())
        .collect();
    let var = (cfg.model4_gamma * h.iter().sum::<f64>() + cfg.model4_delta).exp();
    (mean, var)
}

fn mcar_mask(n: usize, p: usize, eta: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..n * p).map(|_| rng.random_range(0.0..1.0) >= eta).collect()
}

fn median(col: &mut [f64]) -> f64 {
    col.sort_by(f64::total_cmp);
    let m = col.len();
    if m % 2 == 1 {
        col[m / 2]
    } else {
        0.5 * (col[m / 2 - 1] + col[m / 2])
    }
}

fn informative_mask(x: &DMatrix<f64>, eta: f64, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
    let (n, p) = x.shape();
    if p < 5 {
        return Err(Error::Config("informative missingness needs p >= 5".into()));
    }
    let rate = eta * p as f64 / 5.0;
    if rate > 1.0 {
        return Err(Error::Config(format!("informative rate {rate} exceeds 1")));
    }
    let medians: Vec<f64> = (0..5)
        .map(|j| median(&mut x.column(j).iter().copied().collect::<Vec<_>>()))
        .collect();
    let mut observed = vec![true; n * p];
    for i in 0..n {
        for j in 0..5 {
            let u: f64 = rng.random_range(0.0..1.0);
            if x[(i, j)] > medians[j] && u < rate {
                observed[i * p + j] = false;
            }
        }
    }
    Ok(observed)
}

/// Each cell missing independently with probability `eta_missing`.
/// Returns observed indicators, row-major.
pub fn gen_mcar_mask(x: &DMatrix<f64>, eta_missing: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&eta_missing) {
        return Err(Error::Config(format!("eta_missing = {eta_missing} not in [0, 1)")));
    }
    let mut rng = seed::rng(seed, &[STREAM_MASK]);
    Ok(mcar_mask(x.nrows(), x.ncols(), eta_missing, &mut rng))
}

/// Self-masking on the first five columns: a cell above its column median is
/// missing with probability `eta_missing * p / 5`; cells at or below the
/// median are always observed.
pub fn gen_informative_mask(x: &DMatrix<f64>, eta_missing: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&eta_missing) {
        return Err(Error::Config(format!("eta_missing = {eta_missing} not in [0, 1)")));
    }
    let mut rng = seed::rng(seed, &[STREAM_MASK]);
    informative_mask(x, eta_missing, &mut rng)
}

/// Linear predictors for the propensity and outcome surfaces of every unit.
fn linear_predictors(
    cfg: &ScenarioConfig,
    params: &ScenarioParams,
    cov: &Covariates,
    observed: &[bool],
) -> (Vec<f64>, Vec<f64>) {
    let (n, p) = cov.x.shape();
    let mut lp_e = vec![0.0; n];
    let mut lp_y = vec![0.0; n];
    for i in 0..n {
        let (mut se, mut sy) = (cfg.alpha0, cfg.beta0);
        match cfg.regime {
            Regime::Complete => {
                for j in 0..p {
                    se += params.alpha[j] * cov.x[(i, j)];
                    sy += params.beta[j] * cov.x[(i, j)];
                }
            }
            Regime::Despite => {
                for j in 0..p {
                    if observed[i * p + j] {
                        se += params.alpha[j] * cov.x[(i, j)];
                        sy += params.beta[j] * cov.x[(i, j)];
                    } else {
                        se += params.mask_alpha[j];
                        sy += params.mask_beta[j];
                    }
                }
            }
            Regime::Latent => {
                if cfg.uses_class_coefficients() {
                    let c = cov.classes.as_ref().expect("classes")[i];
                    let (ca, cb) = (&params.class_alpha[c], &params.class_beta[c]);
                    for j in 0..p {
                        if observed[i * p + j] {
                            se += ca[j] * cov.x[(i, j)];
                            sy += cb[j] * cov.x[(i, j)];
                        } else {
                            se += ca[j] * params.population_mean[j];
                            sy += cb[j] * params.population_mean[j];
                        }
                    }
                } else {
                    let u = cov.latent.as_ref().expect("latent variables");
                    for k in 0..u.ncols() {
                        se += params.alpha[k] * u[(i, k)];
                        sy += params.beta[k] * u[(i, k)];
                    }
                }
            }
        }
        lp_e[i] = se;
        lp_y[i] = sy;
    }
    (lp_e, lp_y)
}

fn draw_mask(cfg: &ScenarioConfig, x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
    match cfg.mechanism {
        Mechanism::Mcar => Ok(mcar_mask(x.nrows(), x.ncols(), cfg.eta_missing, rng)),
        Mechanism::Informative => informative_mask(x, cfg.eta_missing, rng),
    }
}

fn fill_mask_coefficients(cfg: &ScenarioConfig, params: &mut ScenarioParams) {
    params.mask_alpha = cfg.mask_alpha.clone().unwrap_or_else(|| {
        params.alpha.iter().zip(&params.population_mean).map(|(a, m)| a * m).collect()
    });
    params.mask_beta = cfg.mask_beta.clone().unwrap_or_else(|| {
        params.beta.iter().zip(&params.population_mean).map(|(b, m)| b * m).collect()
    });
}

/// Resolve scenario-level parameters. Default coefficients are drawn from
/// `U(-0.5, 0.5)`; default treatment coefficients are then shrunk until 99%
/// of pilot propensities fall inside (0.05, 0.95).
pub fn scenario_params(cfg: &ScenarioConfig) -> Result<ScenarioParams> {
    cfg.validate()?;
    let (v, w_hidden, a, b) = model_weights(cfg);
    let mut coef_rng = seed::rng(cfg.seed, &[STREAM_COEF]);
    let k = cfg.coef_len();
    let default_alpha = uniform_vec(&mut coef_rng, k, -0.5, 0.5);
    let default_beta = uniform_vec(&mut coef_rng, k, -0.5, 0.5);
    let n_classes = cfg.mixture_or_default().k();
    let mut class_alpha: Vec<Vec<f64>> = Vec::new();
    let mut class_beta: Vec<Vec<f64>> = Vec::new();
    for _ in 0..n_classes {
        class_alpha.push(uniform_vec(&mut coef_rng, cfg.p, -0.5, 0.5));
        class_beta.push(uniform_vec(&mut coef_rng, cfg.p, -0.5, 0.5));
    }

    let mut pilot_rng = seed::rng(cfg.seed, &[STREAM_PILOT]);
    let pilot = draw_covariates(cfg, v.as_ref(), w_hidden.as_ref(), &a, &b, PILOT_SIZE, &mut pilot_rng)?;
    let pilot_mask = draw_mask(cfg, &pilot.x, &mut pilot_rng)?;
    let population_mean = match cfg.model {
        Model::Model1 => vec![1.0; cfg.p],
        Model::Model2 => cfg.mixture_or_default().population_mean(),
        Model::Model3 => vec![0.0; cfg.p],
        Model::Model4 => (0..cfg.p).map(|j| pilot.x.column(j).mean()).collect(),
    };

    let mut params = ScenarioParams {
        alpha: cfg.alpha.clone().unwrap_or_else(|| default_alpha.clone()),
        beta: cfg.beta.clone().unwrap_or(default_beta),
        mask_alpha: vec![],
        mask_beta: vec![],
        class_alpha,
        class_beta,
        v,
        w_hidden,
        a,
        b,
        population_mean,
        overlap_scale: 1.0,
    };
    fill_mask_coefficients(cfg, &mut params);

    let default_treatment = if cfg.uses_class_coefficients() { true } else { cfg.alpha.is_none() };
    if default_treatment {
        let inside = |params: &ScenarioParams| {
            let (lp, _) = linear_predictors(cfg, params, &pilot, &pilot_mask);
            lp.iter().filter(|t| t.abs() < OVERLAP_LOGIT).count() as f64 / lp.len() as f64
        };
        let scaled = |s: f64| {
            let mut q = params.clone();
            q.alpha.iter_mut().for_each(|x| *x *= s);
            q.class_alpha.iter_mut().flatten().for_each(|x| *x *= s);
            fill_mask_coefficients(cfg, &mut q);
            q
        };
        if inside(&params) < 0.99 {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if inside(&scaled(mid)) >= 0.99 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            params = scaled(lo);
            params.overlap_scale = lo;
        }
    }
    Ok(params)
}

/// One simulated replication with its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub dataset: ObservationalDataset,
    pub full_covariates: DMatrix<f64>,
    /// `U` (Model 3) or codes `C` (Model 4).
    pub latent: Option<DMatrix<f64>>,
    /// Model 2 class labels.
    pub classes: Option<Vec<usize>>,
    pub true_tau: f64,
    pub true_propensity: Vec<f64>,
    pub true_mu0: Vec<f64>,
    pub true_mu1: Vec<f64>,
    /// Units whose true propensity falls outside (1e-6, 1 - 1e-6).
    pub overlap_warnings: usize,
}

/// Treatment and outcome for given covariates and observed mask.
/// Returns `(W, Y, true propensity, mu0, overlap warnings)`.
pub fn gen_treatment_outcome(
    cfg: &ScenarioConfig,
    params: &ScenarioParams,
    x: &DMatrix<f64>,
    latent: Option<&DMatrix<f64>>,
    classes: Option<&[usize]>,
    observed: &[bool],
) -> Result<(Vec<bool>, Vec<f64>, Vec<f64>, Vec<f64>, usize)> {
    let (n, p) = x.shape();
    if observed.len() != n * p {
        return Err(Error::Dimension("mask does not match covariates".into()));
    }
    if cfg.regime == Regime::Latent && !cfg.uses_class_coefficients() && latent.is_none() {
        return Err(Error::InvalidInput("latent regime needs latent variables".into()));
    }
    if cfg.uses_class_coefficients() && classes.is_none() {
        return Err(Error::InvalidInput("model2 latent regime needs class labels".into()));
    }
    let k = if cfg.regime == Regime::Latent && !cfg.uses_class_coefficients() {
        latent.map_or(0, |u| u.ncols())
    } else {
        p
    };
    if params.alpha.len() != k || params.beta.len() != k {
        return Err(Error::Dimension(format!("coefficients must have length {k}")));
    }
    let cov = Covariates {
        x: x.clone(),
        latent: latent.cloned(),
        classes: classes.map(<[usize]>::to_vec),
    };
    let (lp_e, lp_y) = linear_predictors(cfg, params, &cov, observed);
    let mut t_rng = cfg.rep_rng(STREAM_TREATMENT);
    let mut y_rng = cfg.rep_rng(STREAM_OUTCOME);
    let mut w = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    let mut warnings = 0;
    for i in 0..n {
        let ei = sigmoid(lp_e[i]);
        if !(1e-6..=1.0 - 1e-6).contains(&ei) {
            warnings += 1;
        }
        let wi = t_rng.random_range(0.0..1.0) < ei;
        let noise = normal(&mut y_rng);
        y.push(lp_y[i] + if wi { cfg.tau } else { 0.0 } + cfg.sigma * noise);
        w.push(wi);
        e.push(ei);
    }
    Ok((w, y, e, lp_y, warnings))
}

/// Generate one replication of the configured scenario.
pub fn generate(cfg: &ScenarioConfig) -> Result<GeneratedScenario> {
    let params = scenario_params(cfg)?;
    generate_with(cfg, &params)
}

/// As [`generate`], reusing already-resolved scenario parameters.
pub fn generate_with(cfg: &ScenarioConfig, params: &ScenarioParams) -> Result<GeneratedScenario> {
    cfg.validate()?;
    let mut x_rng = cfg.rep_rng(STREAM_COVARIATES);
    let cov = draw_covariates(cfg, params.v.as_ref(), params.w_hidden.as_ref(), &params.a, &params.b, cfg.n, &mut x_rng)?;
    let mut m_rng = cfg.rep_rng(STREAM_MASK);
    let observed = draw_mask(cfg, &cov.x, &mut m_rng)?;
    let (w, y, e, mu0, warnings) = gen_treatment_outcome(
        cfg,
        params,
        &cov.x,
        cov.latent.as_ref(),
        cov.classes.as_deref(),
        &observed,
    )?;
    let (n, p) = cov.x.shape();
    let values: Vec<f64> = (0..n).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| cov.x[(i, j)]).collect();
    let covariates = MaskedMatrix::new(n, p, values, observed)?;
    let mu1 = mu0.iter().map(|m| m + cfg.tau).collect();
    Ok(GeneratedScenario {
        dataset: ObservationalDataset::new(covariates, w, y)?,
        full_covariates: cov.x,
        latent: cov.latent,
        classes: cov.classes,
        true_tau: cfg.tau,
        true_propensity: e,
        true_mu0: mu0,
        true_mu1: mu1,
        overlap_warnings: warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(model: Model, n: usize) -> ScenarioConfig {
        ScenarioConfig { model, n, seed: 42, ..Default::default() }
    }

    fn col_mean(x: &DMatrix<f64>, j: usize) -> f64 {
        x.column(j).mean()
    }

    fn corr(x: &DMatrix<f64>, a: usize, b: usize) -> f64 {
        let (ma, mb) = (col_mean(x, a), col_mean(x, b));
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for i in 0..x.nrows() {
            let (da, db) = (x[(i, a)] - ma, x[(i, b)] - mb);
            sab += da * db;
            saa += da * da;
            sbb += db * db;
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn model1_moments() {
        let x = gen_model1(&cfg(Model::Model1, 5000)).unwrap();
        let tol = 3.0 / 5000f64.sqrt();
        for j in 0..10 {
            assert!((col_mean(&x, j) - 1.0).abs() < tol, "column {j} mean {}", col_mean(&x, j));
        }
        for a in 0..10 {
            for b in a + 1..10 {
                assert!((corr(&x, a, b) - 0.6).abs() < 0.05);
            }
        }
    }

    #[test]
    fn model1_empty_and_deterministic() {
        assert_eq!(gen_model1(&cfg(Model::Model1, 0)).unwrap().nrows(), 0);
        let c = cfg(Model::Model1, 50);
        assert_eq!(gen_model1(&c).unwrap(), gen_model1(&c).unwrap());
    }

    #[test]
    fn model2_single_class_and_frequencies() {
        let p = 4;
        let single = MixtureParams {
            proportions: vec![1.0],
            means: vec![vec![3.0; p]],
            covariances: vec![model1_covariance(p).as_slice().to_vec()],
        };
        let c = ScenarioConfig { p, ..cfg(Model::Model2, 4000) };
        let (x, classes) = gen_model2(&c, &single).unwrap();
        assert!(classes.iter().all(|&k| k == 0));
        for j in 0..p {
            assert!((col_mean(&x, j) - 3.0).abs() < 3.0 / 4000f64.sqrt());
        }

        let m = MixtureParams::default_for(10);
        let c = cfg(Model::Model2, 6000);
        let (_, classes) = gen_model2(&c, &m).unwrap();
        for (k, &q) in m.proportions.iter().enumerate() {
            let freq = classes.iter().filter(|&&c| c == k).count() as f64 / 6000.0;
            let se = (q * (1.0 - q) / 6000.0).sqrt();
            assert!((freq - q).abs() < 3.0 * se, "class {k}: {freq}");
        }
        assert_eq!(gen_model2(&c, &m).unwrap(), gen_model2(&c, &m).unwrap());
    }

    #[test]
    fn model2_rejects_bad_proportions() {
        let mut m = MixtureParams::default_for(10);
        m.proportions = vec![0.3, 0.3, 0.3];
        assert!(gen_model2(&cfg(Model::Model2, 10), &m).is_err());
    }

    #[test]
    fn model3_rank_and_shared_loadings() {
        let c = cfg(Model::Model3, 300);
        let (x, u) = gen_model3(&c).unwrap();
        assert_eq!(u.ncols(), 3);
        let sv = x.clone().svd(false, false).singular_values;
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!(s[2] > 1e-3);
        assert!(s[3..].iter().all(|&v| v <= 1e-10 * s[0].max(1.0)));
        // same V, different U across replications
        let c2 = ScenarioConfig { replication: 1, ..c.clone() };
        let (x2, u2) = gen_model3(&c2).unwrap();
        let v1 = scenario_params(&c).unwrap().v.unwrap();
        assert!((&u2 * v1.transpose() - &x2).amax() < 1e-12);
        assert_ne!(u, u2);
    }

    #[test]
    fn model4_degenerate_settings() {
        let c = ScenarioConfig { model4_gamma: 0.0, model4_delta: 0.0, ..cfg(Model::Model4, 10) };
        let mut params = scenario_params(&c).unwrap();
        let (_, var) = model4_conditional(&params, &c, &[0.3, -1.0, 2.0]);
        assert_eq!(var, 1.0);
        params.w_hidden = Some(DMatrix::zeros(5, 3));
        params.a = vec![0.0; 5];
        let (mean, _) = model4_conditional(&params, &c, &[0.3, -1.0, 2.0]);
        assert_eq!(mean, params.b);
    }

    #[test]
    fn model4_conditional_variance_matches_formula() {
        let c = ScenarioConfig { model4_gamma: 0.4, ..cfg(Model::Model4, 20_000) };
        let params = scenario_params(&c).unwrap();
        let (x, codes) = gen_model4(&c).unwrap();
        // standardized residuals against the stated conditional law
        let mut ss = vec![0.0; c.p];
        for i in 0..c.n {
            let code: Vec<f64> = codes.row(i).iter().copied().collect();
            let (mean, var) = model4_conditional(&params, &c, &code);
            for j in 0..c.p {
                ss[j] += (x[(i, j)] - mean[j]).powi(2) / var;
            }
        }
        for (j, s) in ss.iter().enumerate() {
            assert!((s / c.n as f64 - 1.0).abs() < 0.05, "coordinate {j}: {}", s / c.n as f64);
        }
    }

    #[test]
    fn mcar_mask_rates() {
        let x = DMatrix::zeros(1000, 10);
        assert!(gen_mcar_mask(&x, 0.0, 1).unwrap().iter().all(|&o| o));
        assert!(gen_mcar_mask(&x, 1.0, 1).is_err());
        let m = gen_mcar_mask(&x, 0.3, 1).unwrap();
        let missing = m.iter().filter(|&&o| !o).count() as f64;
        assert!((missing - 3000.0).abs() < 3.0 * (10_000.0 * 0.3 * 0.7f64).sqrt());
    }

    #[test]
    fn informative_mask_rules() {
        let x = gen_model1(&cfg(Model::Model1, 2000)).unwrap();
        assert!(gen_informative_mask(&x, 0.0, 3).unwrap().iter().all(|&o| o));
        let m = gen_informative_mask(&x, 0.3, 3).unwrap();
        let missing = m.iter().filter(|&&o| !o).count() as f64;
        // expected 0.15 * n * p = 3000, binomial over ~n*5/2 eligible cells
        let sd = (5000.0 * 0.6 * 0.4f64).sqrt();
        assert!((missing - 3000.0).abs() < 4.0 * sd, "{missing}");
        for j in 0..10 {
            let med = median(&mut x.column(j).iter().copied().collect::<Vec<_>>());
            for i in 0..2000 {
                if !m[i * 10 + j] {
                    assert!(j < 5);
                    assert!(x[(i, j)] > med);
                }
            }
        }
        assert!(gen_informative_mask(&DMatrix::zeros(10, 4), 0.3, 1).is_err());
        assert!(gen_informative_mask(&DMatrix::zeros(10, 10), 0.6, 1).is_err());
    }

    #[test]
    fn randomized_and_noiseless_cases() {
        let c = ScenarioConfig {
            alpha: Some(vec![0.0; 10]),
            beta: Some(vec![0.0; 10]),
            sigma: 0.0,
            tau: 2.5,
            ..cfg(Model::Model1, 500)
        };
        let g = generate(&c).unwrap();
        assert!(g.true_propensity.iter().all(|&e| e == 0.5));
        for i in 0..500 {
            assert_eq!(g.dataset.outcome[i], 2.5 * g.dataset.w(i));
        }
    }

    #[test]
    fn despite_regime_depends_on_masked_covariates_only() {
        let c = ScenarioConfig { regime: Regime::Despite, ..cfg(Model::Model1, 400) };
        let params = scenario_params(&c).unwrap();
        let g = generate_with(&c, &params).unwrap();
        // perturb the unobserved cells: propensities must not move
        let mut x = g.full_covariates.clone();
        let obs: Vec<bool> = (0..400).flat_map(|i| (0..10).map(move |j| (i, j))).map(|(i, j)| g.dataset.covariates.is_observed(i, j)).collect();
        for i in 0..400 {
            for j in 0..10 {
                if !obs[i * 10 + j] {
                    x[(i, j)] += 7.0;
                }
            }
        }
        let (_, _, e, _, _) = gen_treatment_outcome(&c, &params, &x, None, None, &obs).unwrap();
        assert_eq!(e, g.true_propensity);
    }

    #[test]
    fn default_coefficients_respect_overlap() {
        for model in [Model::Model1, Model::Model2, Model::Model3] {
            let regime = if model == Model::Model1 { Regime::Complete } else { Regime::Latent };
            let c = ScenarioConfig { regime, ..cfg(model, 5000) };
            let g = generate(&c).unwrap();
            let inside = g.true_propensity.iter().filter(|&&e| e > 0.05 && e < 0.95).count();
            assert!(inside as f64 >= 0.97 * 5000.0, "{model}: {inside}");
        }
    }

    #[test]
    fn average_effect_equals_tau() {
        // Y(1) - Y(0) = tau + (noise difference); Monte Carlo over 10^6 draws
        let c = ScenarioConfig { n: 1, ..cfg(Model::Model1, 1) };
        let mut rng = seed::rng(5, &[]);
        let m = 1_000_000;
        let mut s = 0.0;
        let mut ss = 0.0;
        for _ in 0..m {
            let d = c.tau + c.sigma * (normal(&mut rng) - normal(&mut rng));
            s += d;
            ss += d * d;
        }
        let mean = s / m as f64;
        let se = ((ss / m as f64 - mean * mean) / m as f64).sqrt();
        assert!((mean - c.tau).abs() < 3.0 * se);
    }

    #[test]
    fn generation_is_deterministic() {
        let c = ScenarioConfig { mechanism: Mechanism::Informative, regime: Regime::Despite, ..cfg(Model::Model1, 300) };
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.true_propensity, b.true_propensity);
    }

    #[test]
    fn config_validation() {
        assert!(ScenarioConfig { eta_missing: 1.0, ..Default::default() }.validate().is_err());
        assert!(ScenarioConfig { regime: Regime::Latent, ..Default::default() }.validate().is_err());
        assert!(ScenarioConfig { alpha: Some(vec![1.0]), ..Default::default() }.validate().is_err());
        assert!(ScenarioConfig { model: Model::Model3, d: 11, ..Default::default() }.validate().is_err());
        assert!(ScenarioConfig::default().validate().is_ok());
    }
}
