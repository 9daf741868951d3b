//! Percentile bootstrap intervals and the simulation benchmark runner.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AteEstimate, EstimatorForm, NuisanceEstimates, ObservationalDataset};
use crate::error::{Error, Result};
use crate::estimators::{estimate_both_with, MethodFamily, MethodResult, MethodSpec};
use crate::io::fmt_f64;
use crate::seed;
use crate::sim::{generate, Mechanism, Model, Regime, ScenarioConfig};

/// Bootstrap output for one estimator form.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapEstimate {
    /// Full-data point estimate with the percentile interval and the
    /// bootstrap standard deviation as its standard error.
    pub estimate: AteEstimate,
    /// Successful replicate estimates in replicate order.
    pub replicates: Vec<f64>,
    pub failed: usize,
}

/// Inverse empirical CDF (the smallest order statistic whose ECDF reaches `q`).
pub fn quantile_type1(sorted: &[f64], q: f64) -> f64 {
    let b = sorted.len();
    let k = (q * b as f64).ceil() as usize;
    sorted[k.clamp(1, b) - 1]
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn subset(nu: &NuisanceEstimates, rows: &[usize]) -> NuisanceEstimates {
    let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect();
    NuisanceEstimates {
        e_hat: pick(&nu.e_hat),
        mu0_hat: pick(&nu.mu0_hat),
        mu1_hat: pick(&nu.mu1_hat),
        crossfit: nu.crossfit,
    }
}

/// Bootstrap both estimator forms of `spec` with `b` row resamples. Each
/// replicate reruns the whole pipeline on the resampled incomplete data;
/// forests treat copies of one unit as a single sampling unit. `truth`
/// carries the true nuisances for the oracle family.
pub fn bootstrap_both(
    d: &ObservationalDataset,
    spec: &MethodSpec,
    b: usize,
    seed: u64,
    truth: Option<&NuisanceEstimates>,
) -> Result<[BootstrapEstimate; 2]> {
    if b < 2 {
        return Err(Error::Config(format!("bootstrap needs B >= 2, got {b}")));
    }
    let full = estimate_both_with(d, spec, truth, None)?;
    let n = d.n();
    let reps: Vec<Option<(f64, f64)>> = (0..b as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(seed, &[r]);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let clusters: Vec<u64> = rows.iter().map(|&i| i as u64).collect();
            let rd = d.select_rows(&rows);
            let rt = truth.map(|t| subset(t, &rows));
            let rspec = MethodSpec {
                seed: seed::derive(seed, &[r, 0x626f_6f74]),
                ..spec.clone()
            };
            estimate_both_with(&rd, &rspec, rt.as_ref(), Some(&clusters))
                .ok()
                .map(|res| (res.ipw.tau_hat, res.aipw.tau_hat))
                .filter(|(a, c)| a.is_finite() && c.is_finite())
        })
        .collect();
    let failed = reps.iter().filter(|r| r.is_none()).count();
    if failed * 10 > b {
        return Err(Error::Numerical(format!("{failed} of {b} bootstrap replicates failed")));
    }
    let ok: Vec<(f64, f64)> = reps.into_iter().flatten().collect();
    let level = spec.level;
    let make = |point: &AteEstimate, values: Vec<f64>| {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let alpha = (1.0 - level) / 2.0;
        BootstrapEstimate {
            estimate: AteEstimate {
                std_err: sample_sd(&values),
                ci: (quantile_type1(&sorted, alpha), quantile_type1(&sorted, 1.0 - alpha)),
                level,
                ..point.clone()
            },
            replicates: values,
            failed,
        }
    };
    Ok([
        make(&full.ipw, ok.iter().map(|r| r.0).collect()),
        make(&full.aipw, ok.iter().map(|r| r.1).collect()),
    ])
}

/// Percentile bootstrap interval for `spec.form` at `spec.level`.
pub fn bootstrap_ci(
    d: &ObservationalDataset,
    spec: &MethodSpec,
    b: usize,
    seed: u64,
    truth: Option<&NuisanceEstimates>,
) -> Result<BootstrapEstimate> {
    let [ipw, aipw] = bootstrap_both(d, spec, b, seed, truth)?;
    Ok(match spec.form {
        EstimatorForm::Ipw => ipw,
        EstimatorForm::Aipw => aipw,
    })
}

/// A grid of scenarios crossed with methods and estimator forms.
#[derive(Debug, Clone)]
pub struct BenchmarkGrid {
    pub models: Vec<Model>,
    pub mechanisms: Vec<Mechanism>,
    pub regimes: Vec<Regime>,
    pub ns: Vec<usize>,
    pub methods: Vec<MethodFamily>,
    pub forms: Vec<EstimatorForm>,
    pub runs: usize,
    pub master_seed: u64,
    /// Settings shared by every scenario; grid axes override its fields.
    pub scenario: ScenarioConfig,
    /// Settings shared by every method; `family`, `form` and `seed` are
    /// set per cell.
    pub method: MethodSpec,
    /// Bootstrap replicates per cell; 0 keeps the analytic normal interval.
    pub bootstrap: usize,
}

impl BenchmarkGrid {
    /// Model 1, MCAR, unconfoundedness despite missingness, `n` in
    /// {100, 500}, every user-facing method, both forms, 20 runs.
    pub fn small() -> Self {
        Self {
            models: vec![Model::Model1],
            mechanisms: vec![Mechanism::Mcar],
            regimes: vec![Regime::Despite],
            ns: vec![100, 500],
            methods: MethodFamily::USER.to_vec(),
            forms: vec![EstimatorForm::Ipw, EstimatorForm::Aipw],
            runs: 20,
            master_seed: 0,
            scenario: ScenarioConfig::default(),
            method: MethodSpec::new(MethodFamily::Grf, EstimatorForm::Aipw),
            bootstrap: 0,
        }
    }

    pub fn scenarios(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for &model in &self.models {
            for &mechanism in &self.mechanisms {
                for &regime in &self.regimes {
                    for &n in &self.ns {
                        out.push(ScenarioConfig {
                            model,
                            mechanism,
                            regime,
                            n,
                            seed: seed::derive(self.master_seed, &[scenario_family_id(model, mechanism, regime)]),
                            ..self.scenario.clone()
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("models", self.models.is_empty()),
            ("mechanisms", self.mechanisms.is_empty()),
            ("regimes", self.regimes.is_empty()),
            ("ns", self.ns.is_empty()),
            ("methods", self.methods.is_empty()),
            ("forms", self.forms.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|e| e.1) {
            return Err(Error::Config(format!("benchmark grid has no {name}")));
        }
        if self.runs == 0 {
            return Err(Error::Config("benchmark grid needs at least one run".into()));
        }
        if self.bootstrap == 1 {
            return Err(Error::Config("bootstrap needs B >= 2".into()));
        }
        self.method.validate()?;
        for s in self.scenarios() {
            s.validate()?;
        }
        Ok(())
    }
}

/// Coefficients are shared across sample sizes of the same design.
fn scenario_family_id(model: Model, mechanism: Mechanism, regime: Regime) -> u64 {
    seed::hash_str(&format!("{model}/{mechanism}/{regime}"))
}

fn scenario_id(s: &ScenarioConfig) -> u64 {
    seed::hash_str(&format!("{}/{}/{}/{}", s.model, s.mechanism, s.regime, s.n))
}

/// Seed of the method run in one benchmark cell; forms share it.
pub fn cell_seed(master: u64, scenario: &ScenarioConfig, method: MethodFamily, run: u64) -> u64 {
    seed::derive(master, &[scenario_id(scenario), seed::hash_str(method.as_str()), run])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub form: EstimatorForm,
    pub model: Model,
    pub mechanism: Mechanism,
    pub regime: Regime,
    pub n: usize,
    pub run_id: u64,
    pub true_tau: f64,
    pub tau_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_clipped: usize,
    /// `ok`, or the error that ended the cell.
    pub status: String,
    pub seed: u64,
    pub runtime_ms: f64,
}

impl BenchmarkRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn covers(&self) -> bool {
        self.ci_lo <= self.true_tau && self.true_tau <= self.ci_hi
    }
}

fn run_cell(
    grid: &BenchmarkGrid,
    d: &ObservationalDataset,
    truth: &NuisanceEstimates,
    spec: &MethodSpec,
) -> Result<[AteEstimate; 2]> {
    if grid.bootstrap >= 2 {
        let [a, b] = bootstrap_both(d, spec, grid.bootstrap, seed::derive(spec.seed, &[0x6369]), Some(truth))?;
        Ok([a.estimate, b.estimate])
    } else {
        let MethodResult { ipw, aipw, .. } = estimate_both_with(d, spec, Some(truth), None)?;
        Ok([ipw, aipw])
    }
}

/// Run every (scenario, method, form, run) cell. Replications of a scenario
/// share one dataset across methods. Rows come back sorted by grid position
/// (scenario, method, form, run) whatever order the work finishes in.
pub fn run_benchmark(grid: &BenchmarkGrid) -> Result<Vec<BenchmarkRow>> {
    grid.validate()?;
    let scenarios = grid.scenarios();
    let jobs: Vec<(usize, u64)> = (0..scenarios.len())
        .flat_map(|s| (0..grid.runs as u64).map(move |r| (s, r)))
        .collect();
    let mut keyed: Vec<((usize, usize, usize, u64), BenchmarkRow)> = jobs
        .par_iter()
        .flat_map_iter(|&(si, run)| {
            let cfg = ScenarioConfig {
                replication: run,
                ..scenarios[si].clone()
            };
            let generated = generate(&cfg);
            let mut rows = Vec::new();
            for (mi, &family) in grid.methods.iter().enumerate() {
                let spec = MethodSpec {
                    family,
                    seed: cell_seed(grid.master_seed, &cfg, family, run),
                    ..grid.method.clone()
                };
                let start = Instant::now();
                let outcome = generated.as_ref().map_err(|e| e.to_string()).and_then(|g| {
                    let truth = crate::io::Truth::from_scenario(g).nuisances();
                    run_cell(grid, &g.dataset, &truth, &spec).map_err(|e| e.to_string())
                });
                let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
                for (fi, &form) in grid.forms.iter().enumerate() {
                    let base = BenchmarkRow {
                        method: family.as_str().to_string(),
                        form,
                        model: cfg.model,
                        mechanism: cfg.mechanism,
                        regime: cfg.regime,
                        n: cfg.n,
                        run_id: run,
                        true_tau: cfg.tau,
                        tau_hat: f64::NAN,
                        se: f64::NAN,
                        ci_lo: f64::NAN,
                        ci_hi: f64::NAN,
                        n_clipped: 0,
                        status: "ok".into(),
                        seed: spec.seed,
                        runtime_ms,
                    };
                    let row = match &outcome {
                        Ok(est) => {
                            let e = &est[matches!(form, EstimatorForm::Aipw) as usize];
                            BenchmarkRow {
                                tau_hat: e.tau_hat,
                                se: e.std_err,
                                ci_lo: e.ci.0,
                                ci_hi: e.ci.1,
                                n_clipped: e.n_clipped,
                                ..base
                            }
                        }
                        Err(msg) => BenchmarkRow {
                            status: msg.clone(),
                            ..base
                        },
                    };
                    rows.push(((si, mi, fi, run), row));
                }
            }
            rows
        })
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    Ok(keyed.into_iter().map(|(_, r)| r).collect())
}

const RESULT_HEADER: [&str; 15] = [
    "method", "form", "model", "mechanism", "regime", "n", "run_id", "true_tau", "tau_hat", "se", "ci_lo", "ci_hi",
    "n_clipped", "status", "seed",
];

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv {
        row: e.position().map_or(0, |p| p.line() as usize),
        col: 0,
        msg: e.to_string(),
    }
}

fn key_fields(r: &BenchmarkRow) -> Vec<String> {
    vec![
        r.method.clone(),
        r.form.as_str().into(),
        r.model.as_str().into(),
        r.mechanism.as_str().into(),
        r.regime.as_str().into(),
        r.n.to_string(),
        r.run_id.to_string(),
    ]
}

/// Raw results, one line per row. Wall-clock times are left out so that the
/// file depends on the configuration alone; see [`write_timings`].
pub fn write_results(rows: &[BenchmarkRow], out: impl Write) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(RESULT_HEADER).map_err(csv_err)?;
    for r in rows {
        let mut rec = key_fields(r);
        rec.extend([
            fmt_f64(r.true_tau),
            fmt_f64(r.tau_hat),
            fmt_f64(r.se),
            fmt_f64(r.ci_lo),
            fmt_f64(r.ci_hi),
            r.n_clipped.to_string(),
            r.status.clone(),
            r.seed.to_string(),
        ]);
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Cell keys with their runtime in milliseconds.
pub fn write_timings(rows: &[BenchmarkRow], out: impl Write) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(RESULT_HEADER[..7].iter().chain(&["runtime_ms"])).map_err(csv_err)?;
    for r in rows {
        let mut rec = key_fields(r);
        rec.push(format!("{:.3}", r.runtime_ms));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a raw results file; runtimes are set to zero.
pub fn read_results(input: impl std::io::Read) -> Result<Vec<BenchmarkRow>> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Csv {
            row: 1,
            col: 0,
            msg: format!("missing column {name}"),
        })
    };
    let idx: Vec<usize> = RESULT_HEADER.iter().map(|h| col(h)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(csv_err)?;
        let field = |c: usize| rec.get(idx[c]).unwrap_or("").trim();
        let bad = |c: usize| Error::Csv {
            row,
            col: idx[c] + 1,
            msg: format!("cannot parse {} = {:?}", RESULT_HEADER[c], field(c)),
        };
        let float = |c: usize| -> Result<f64> {
            match field(c) {
                "NA" => Ok(f64::NAN),
                s => s.parse().map_err(|_| bad(c)),
            }
        };
        out.push(BenchmarkRow {
            method: field(0).to_string(),
            form: EstimatorForm::parse(field(1)).ok_or_else(|| bad(1))?,
            model: Model::parse(field(2)).ok_or_else(|| bad(2))?,
            mechanism: Mechanism::parse(field(3)).ok_or_else(|| bad(3))?,
            regime: Regime::parse(field(4)).ok_or_else(|| bad(4))?,
            n: field(5).parse().map_err(|_| bad(5))?,
            run_id: field(6).parse().map_err(|_| bad(6))?,
            true_tau: float(7)?,
            tau_hat: float(8)?,
            se: float(9)?,
            ci_lo: float(10)?,
            ci_hi: float(11)?,
            n_clipped: field(12).parse().map_err(|_| bad(12))?,
            status: field(13).to_string(),
            seed: field(14).parse().map_err(|_| bad(14))?,
            runtime_ms: 0.0,
        });
    }
    Ok(out)
}

/// Monte Carlo summary of one (scenario, method, form) cell over its runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub method: String,
    pub form: EstimatorForm,
    pub model: Model,
    pub mechanism: Mechanism,
    pub regime: Regime,
    pub n: usize,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub true_tau: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Population standard deviation, so that `rmse^2 = bias^2 + sd^2`.
    pub sd: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_runtime_ms: f64,
}

/// Summaries in the order cells first appear in `rows`.
pub fn summarize(rows: &[BenchmarkRow]) -> Vec<CellSummary> {
    let mut order: Vec<Vec<String>> = Vec::new();
    let mut groups: std::collections::HashMap<Vec<String>, Vec<&BenchmarkRow>> = Default::default();
    for r in rows {
        let mut key = key_fields(r);
        key.pop();
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let first = g[0];
            let ok: Vec<&&BenchmarkRow> = g.iter().filter(|r| r.is_ok()).collect();
            let k = ok.len() as f64;
            let mean = |f: &dyn Fn(&BenchmarkRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / k;
            let true_tau = mean(&|r| r.true_tau);
            let mean_estimate = mean(&|r| r.tau_hat);
            let sd = mean(&|r| (r.tau_hat - mean_estimate).powi(2)).sqrt();
            let rmse = mean(&|r| (r.tau_hat - r.true_tau).powi(2)).sqrt();
            CellSummary {
                method: first.method.clone(),
                form: first.form,
                model: first.model,
                mechanism: first.mechanism,
                regime: first.regime,
                n: first.n,
                runs_ok: ok.len(),
                runs_failed: g.len() - ok.len(),
                true_tau,
                mean_estimate,
                bias: mean_estimate - true_tau,
                sd,
                rmse,
                coverage: mean(&|r| r.covers() as u8 as f64),
                mean_runtime_ms: g.iter().map(|r| r.runtime_ms).sum::<f64>() / g.len() as f64,
            }
        })
        .collect()
}

pub fn write_summary(cells: &[CellSummary], out: impl Write) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record([
        "method", "form", "model", "mechanism", "regime", "n", "runs_ok", "runs_failed", "true_tau", "mean_estimate",
        "bias", "sd", "rmse", "coverage", "mean_runtime_ms",
    ])
    .map_err(csv_err)?;
    for c in cells {
        w.write_record([
            c.method.clone(),
            c.form.as_str().into(),
            c.model.as_str().into(),
            c.mechanism.as_str().into(),
            c.regime.as_str().into(),
            c.n.to_string(),
            c.runs_ok.to_string(),
            c.runs_failed.to_string(),
            fmt_f64(c.true_tau),
            fmt_f64(c.mean_estimate),
            fmt_f64(c.bias),
            fmt_f64(c.sd),
            fmt_f64(c.rmse),
            fmt_f64(c.coverage),
            format!("{:.3}", c.mean_runtime_ms),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
