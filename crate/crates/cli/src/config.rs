//! Run configuration file.
//!
//! TOML with dotted sections (`scenario.model`, `method.family`,
//! `method.forest.n_trees`, `benchmark.ns`, ...). Every section is optional
//! and unknown keys are rejected with the line they appear on. Relative paths
//! are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use drate_core::em::{EmOptions, SaemOptions};
use drate_core::forest::ForestParams;
use drate_core::impute::SoftImputeOptions;
use drate_core::inference::BenchmarkGrid;
use drate_core::{EstimatorForm, Mechanism, MethodFamily, MethodSpec, Model, Regime, ScenarioConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for everything random in the run.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Dataset CSV for `estimate`, results CSV for `report`.
    pub input: Option<PathBuf>,
    /// Output directory.
    pub output: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub method: MethodSection,
    pub bootstrap: BootstrapSection,
    pub benchmark: BenchmarkSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSection {
    pub family: String,
    pub form: String,
    pub include_mask: bool,
    pub eta_clip: f64,
    pub m: usize,
    pub fcs_cycles: usize,
    pub n_mc: usize,
    pub level: f64,
    pub lambda_grid: Option<Vec<f64>>,
    pub forest: ForestSection,
    pub saem: SaemSection,
    pub em: EmSection,
    pub soft_impute: SoftImputeSection,
}

impl Default for MethodSection {
    fn default() -> Self {
        let s = MethodSpec::new(MethodFamily::Grf, EstimatorForm::Aipw);
        Self {
            family: s.family.as_str().into(),
            form: s.form.as_str().into(),
            include_mask: s.include_mask,
            eta_clip: s.eta_clip,
            m: s.m,
            fcs_cycles: s.fcs_cycles,
            n_mc: s.n_mc,
            level: s.level,
            lambda_grid: s.lambda_grid,
            forest: ForestSection::default(),
            saem: SaemSection::default(),
            em: EmSection::default(),
            soft_impute: SoftImputeSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: usize,
    pub subsample_fraction: f64,
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub honesty: bool,
}

impl Default for ForestSection {
    fn default() -> Self {
        let f = ForestParams::default();
        Self {
            n_trees: f.n_trees,
            subsample_fraction: f.subsample_fraction,
            mtry: f.mtry,
            min_node_size: f.min_node_size,
            honesty: f.honesty,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaemSection {
    pub max_iter: usize,
    pub burn_in: usize,
    pub step_exponent: f64,
    pub mcmc_sweeps: usize,
    pub tol: f64,
    pub window: usize,
}

impl Default for SaemSection {
    fn default() -> Self {
        let s = SaemOptions::default();
        Self {
            max_iter: s.max_iter,
            burn_in: s.burn_in,
            step_exponent: s.step_exponent,
            mcmc_sweeps: s.mcmc_sweeps,
            tol: s.tol,
            window: s.window,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSection {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EmSection {
    fn default() -> Self {
        let e = EmOptions::default();
        Self {
            max_iter: e.max_iter,
            tol: e.tol,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftImputeSection {
    pub max_rank: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SoftImputeSection {
    fn default() -> Self {
        let s = SoftImputeOptions::default();
        Self {
            max_rank: s.max_rank,
            tol: s.tol,
            max_iter: s.max_iter,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    /// Number of resamples; 0 reports the analytic normal interval.
    pub replicates: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub models: Vec<Model>,
    pub mechanisms: Vec<Mechanism>,
    pub regimes: Vec<Regime>,
    pub ns: Vec<usize>,
    pub methods: Vec<String>,
    pub forms: Vec<String>,
    pub runs: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let g = BenchmarkGrid::small();
        Self {
            models: g.models,
            mechanisms: g.mechanisms,
            regimes: g.regimes,
            ns: g.ns,
            methods: g.methods.iter().map(|m| m.as_str().to_string()).collect(),
            forms: g.forms.iter().map(|f| f.as_str().to_string()).collect(),
            runs: g.runs,
        }
    }
}

/// Method names accepted on the command line, plus `oracle` where truth is
/// available.
pub fn parse_family(name: &str, allow_oracle: bool) -> Result<MethodFamily, CliError> {
    if allow_oracle && name == "oracle" {
        return Ok(MethodFamily::Oracle);
    }
    MethodFamily::parse(name).ok_or_else(|| {
        let known: Vec<&str> = MethodFamily::USER.iter().map(|f| f.as_str()).collect();
        CliError::Usage(format!("unknown method {name:?}; expected one of {}", known.join(", ")))
    })
}

pub fn parse_form(name: &str) -> Result<EstimatorForm, CliError> {
    EstimatorForm::parse(name).ok_or_else(|| CliError::Usage(format!("unknown estimator form {name:?}; expected ipw or aipw")))
}

impl RunConfig {
    /// Parse a configuration file and apply `key=value` overrides (values are
    /// TOML literals; bare words are taken as strings).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let (text, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                (text, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (String::new(), PathBuf::new()),
        };
        let origin = path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string());
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{origin}: {e}")))?;
        if !overrides.is_empty() {
            let mut table: toml::Table = text.parse().map_err(|e| CliError::Usage(format!("{origin}: {e}")))?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            cfg = toml::Value::Table(table)
                .try_into()
                .map_err(|e| CliError::Usage(format!("override: {e}")))?;
        }
        for p in [&mut cfg.input, &mut cfg.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// The method to run, seeded from the master seed.
    pub fn method_spec(&self, allow_oracle: bool) -> Result<MethodSpec, CliError> {
        let m = &self.method;
        let family = parse_family(&m.family, allow_oracle)?;
        let form = parse_form(&m.form)?;
        let spec = MethodSpec {
            include_mask: m.include_mask,
            eta_clip: m.eta_clip,
            m: m.m,
            fcs_cycles: m.fcs_cycles,
            n_mc: m.n_mc,
            level: m.level,
            lambda_grid: m.lambda_grid.clone(),
            forest: ForestParams {
                n_trees: m.forest.n_trees,
                subsample_fraction: m.forest.subsample_fraction,
                mtry: m.forest.mtry,
                min_node_size: m.forest.min_node_size,
                honesty: m.forest.honesty,
                ..ForestParams::default()
            },
            saem: SaemOptions {
                max_iter: m.saem.max_iter,
                burn_in: m.saem.burn_in,
                step_exponent: m.saem.step_exponent,
                mcmc_sweeps: m.saem.mcmc_sweeps,
                tol: m.saem.tol,
                window: m.saem.window,
                ..SaemOptions::default()
            },
            em: EmOptions {
                max_iter: m.em.max_iter,
                tol: m.em.tol,
            },
            soft_impute: SoftImputeOptions {
                max_rank: m.soft_impute.max_rank,
                tol: m.soft_impute.tol,
                max_iter: m.soft_impute.max_iter,
                ..SoftImputeOptions::default()
            },
            seed: self.master_seed(),
            ..MethodSpec::new(family, form)
        };
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }

    /// Scenario with the master seed applied when one is given.
    pub fn scenario(&self) -> Result<ScenarioConfig, CliError> {
        let s = ScenarioConfig {
            seed: self.seed.unwrap_or(self.scenario.seed),
            ..self.scenario.clone()
        };
        s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(s)
    }

    pub fn grid(&self) -> Result<BenchmarkGrid, CliError> {
        let b = &self.benchmark;
        let grid = BenchmarkGrid {
            models: b.models.clone(),
            mechanisms: b.mechanisms.clone(),
            regimes: b.regimes.clone(),
            ns: b.ns.clone(),
            methods: b.methods.iter().map(|m| parse_family(m, true)).collect::<Result<_, _>>()?,
            forms: b.forms.iter().map(|f| parse_form(f)).collect::<Result<_, _>>()?,
            runs: b.runs,
            master_seed: self.master_seed(),
            scenario: self.scenario.clone(),
            method: MethodSpec {
                family: MethodFamily::Grf,
                ..self.method_spec(true)?
            },
            bootstrap: self.bootstrap.replicates,
        };
        grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(grid)
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not KEY=VALUE")))?;
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override {key:?}: {part} is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
