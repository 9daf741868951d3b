//! The four subcommands. Each takes a loaded [`RunConfig`] and writes its
//! files under the configured output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use drate_core::estimators::estimate_both;
use drate_core::inference::{bootstrap_both, run_benchmark, summarize, write_results, write_summary, write_timings};
use drate_core::io::{read_dataset_path, write_dataset_path, write_truth_path, Truth};
use drate_core::{seed, sim, EstimatorForm};
use serde::{Deserialize, Serialize};

use crate::{report, CliError, RunConfig};

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const ESTIMATE_FILE: &str = "estimate.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMINGS_FILE: &str = "timings.csv";

const BOOTSTRAP_TAG: u64 = 0x6273;

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Write `data.csv` and its `truth.csv` sidecar; returns both paths.
pub fn simulate(cfg: &RunConfig) -> Result<(PathBuf, PathBuf), CliError> {
    let scenario = cfg.scenario()?;
    let g = sim::generate(&scenario)?;
    let dir = out_dir(cfg)?;
    let (data, truth) = (dir.join(DATA_FILE), dir.join(TRUTH_FILE));
    write_dataset_path(&g.dataset, &data)?;
    write_truth_path(&Truth::from_scenario(&g), &truth)?;
    Ok((data, truth))
}

/// The record written by `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub method: String,
    pub form: EstimatorForm,
    pub tau_hat: f64,
    pub std_err: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    /// `normal` or `percentile-bootstrap`.
    pub interval: String,
    pub bootstrap_replicates: usize,
    pub bootstrap_failed: usize,
    pub n: usize,
    pub n_used: usize,
    pub n_clipped: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl std::fmt::Display for EstimateRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "method    {} ({})", self.method, self.form.as_str())?;
        writeln!(f, "tau_hat   {:.6}", self.tau_hat)?;
        writeln!(f, "se        {:.6}", self.std_err)?;
        writeln!(
            f,
            "ci        [{:.6}, {:.6}] ({}% {})",
            self.ci_lo,
            self.ci_hi,
            self.level * 100.0,
            self.interval
        )?;
        writeln!(f, "n         {} (used {})", self.n, self.n_used)?;
        write!(f, "clipped   {}", self.n_clipped)?;
        for w in &self.warnings {
            write!(f, "\nwarning   {w}")?;
        }
        Ok(())
    }
}

/// Estimate the effect on the input CSV and write `estimate.json`.
pub fn estimate(cfg: &RunConfig) -> Result<(EstimateRecord, PathBuf), CliError> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| CliError::Usage("estimate needs an input dataset (input = ... or --input)".into()))?;
    if !input.exists() {
        return Err(CliError::Usage(format!("input {} does not exist", input.display())));
    }
    let spec = cfg.method_spec(false)?;
    let d = read_dataset_path(input)?;
    let full = estimate_both(&d, &spec)?;
    let b = cfg.bootstrap.replicates;
    let (est, interval, failed) = if b > 0 {
        let [ipw, aipw] = bootstrap_both(&d, &spec, b, seed::derive(cfg.master_seed(), &[BOOTSTRAP_TAG]), None)?;
        let chosen = match spec.form {
            EstimatorForm::Ipw => ipw,
            EstimatorForm::Aipw => aipw,
        };
        (chosen.estimate, "percentile-bootstrap", chosen.failed)
    } else {
        (full.get(spec.form).clone(), "normal", 0)
    };
    let record = EstimateRecord {
        method: est.method.clone(),
        form: est.form,
        tau_hat: est.tau_hat,
        std_err: est.std_err,
        ci_lo: est.ci.0,
        ci_hi: est.ci.1,
        level: est.level,
        interval: interval.into(),
        bootstrap_replicates: b,
        bootstrap_failed: failed,
        n: d.n(),
        n_used: est.n_used,
        n_clipped: est.n_clipped,
        seed: spec.seed,
        warnings: full.warnings,
    };
    let path = out_dir(cfg)?.join(ESTIMATE_FILE);
    let mut f = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut f, &record).map_err(std::io::Error::from)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok((record, path))
}

/// Run the configured grid; writes the raw results, the per-cell summary
/// and the timings, returning the paths in that order.
pub fn benchmark(cfg: &RunConfig) -> Result<[PathBuf; 3], CliError> {
    let grid = cfg.grid()?;
    let rows = run_benchmark(&grid)?;
    let dir = out_dir(cfg)?;
    let paths = [dir.join(RESULTS_FILE), dir.join(SUMMARY_FILE), dir.join(TIMINGS_FILE)];
    write_results(&rows, BufWriter::new(File::create(&paths[0])?))?;
    write_summary(&summarize(&rows), BufWriter::new(File::create(&paths[1])?))?;
    write_timings(&rows, BufWriter::new(File::create(&paths[2])?))?;
    Ok(paths)
}

/// Long-format plot data from a results CSV.
pub fn report(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| CliError::Usage("report needs a results file (input = ... or --input)".into()))?;
    if !input.exists() {
        return Err(CliError::Usage(format!("input {} does not exist", input.display())));
    }
    let rows = drate_core::inference::read_results(File::open(input)?)?;
    report::write_report(&rows, &out_dir(cfg)?)
}
