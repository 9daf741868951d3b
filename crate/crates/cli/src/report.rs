//! Plot data: benchmark rows in long format, one file per
//! (model, mechanism) panel plus one file with every row.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use drate_core::inference::BenchmarkRow;
use drate_core::io::fmt_f64;

use crate::CliError;

pub const HEADER: [&str; 9] = ["model", "mechanism", "regime", "n", "method", "form", "run_id", "estimate", "true_tau"];
pub const ALL_FILE: &str = "report_all.csv";

pub fn panel_file(model: &str, mechanism: &str) -> String {
    format!("report_{model}_{mechanism}.csv")
}

fn write_rows(rows: &[&BenchmarkRow], path: &Path) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(path)?));
    let err = |e: csv::Error| CliError::Io(e.into());
    w.write_record(HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.model.as_str().to_string(),
            r.mechanism.as_str().into(),
            r.regime.as_str().into(),
            r.n.to_string(),
            r.method.clone(),
            r.form.as_str().into(),
            r.run_id.to_string(),
            fmt_f64(r.tau_hat),
            fmt_f64(r.true_tau),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Successful rows only. Returns the written paths, the combined file first.
pub fn write_report(rows: &[BenchmarkRow], dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ok: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let mut panels: BTreeMap<(String, String), Vec<&BenchmarkRow>> = BTreeMap::new();
    for r in &ok {
        panels
            .entry((r.model.as_str().into(), r.mechanism.as_str().into()))
            .or_default()
            .push(r);
    }
    let mut paths = vec![dir.join(ALL_FILE)];
    write_rows(&ok, &paths[0])?;
    for ((model, mechanism), group) in &panels {
        let p = dir.join(panel_file(model, mechanism));
        write_rows(group, &p)?;
        paths.push(p);
    }
    Ok(paths)
}
