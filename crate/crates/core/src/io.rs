//! CSV files: datasets (`X1..Xp, W, Y`), truth sidecars and the float
//! format shared by every table the crate writes.
//!
//! Missing cells are the literal `NA`, lines end in `\n`, and floats carry
//! 17 significant digits so that reading a file back reproduces each value
//! bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::data::{MaskedMatrix, ObservationalDataset};
use crate::error::{Error, Result};
use crate::sim::GeneratedScenario;

pub const NA: &str = "NA";

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        NA.to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Csv {
            row: 0,
            col: 0,
            msg: format!("{other:?}"),
        },
    }
}

fn dataset_header(p: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=p).map(|j| format!("X{j}")).collect();
    h.push("W".into());
    h.push("Y".into());
    h
}

pub fn write_dataset(d: &ObservationalDataset, out: impl Write) -> Result<()> {
    let mut w = writer(out);
    let p = d.covariates.p();
    w.write_record(dataset_header(p)).map_err(csv_err)?;
    let mut rec = Vec::with_capacity(p + 2);
    for i in 0..d.n() {
        rec.clear();
        for j in 0..p {
            rec.push(d.covariates.get(i, j).map_or_else(|| NA.to_string(), fmt_f64));
        }
        rec.push(if d.treatment[i] { "1" } else { "0" }.to_string());
        rec.push(fmt_f64(d.outcome[i]));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_path(d: &ObservationalDataset, path: &Path) -> Result<()> {
    write_dataset(d, BufWriter::new(File::create(path)?))
}

/// Parse a dataset. Row numbers in errors count the header as row 1, columns
/// are 1-based.
pub fn read_dataset(input: impl Read) -> Result<ObservationalDataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(|s| s.trim().to_string()).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let w_col = find("W").ok_or_else(|| Error::Csv {
        row: 1,
        col: 0,
        msg: "missing column W".into(),
    })?;
    let y_col = find("Y").ok_or_else(|| Error::Csv {
        row: 1,
        col: 0,
        msg: "missing column Y".into(),
    })?;
    let x_cols: Vec<usize> = (0..header.len()).filter(|&c| c != w_col && c != y_col).collect();
    for (k, &c) in x_cols.iter().enumerate() {
        if header[c] != format!("X{}", k + 1) {
            return Err(Error::Csv {
                row: 1,
                col: c + 1,
                msg: format!("expected header X{}, found {:?}", k + 1, header[c]),
            });
        }
    }
    let p = x_cols.len();
    let (mut values, mut observed, mut treatment, mut outcome) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (idx, rec) in r.records().enumerate() {
        let row = idx + 2;
        let rec = rec.map_err(|e| Error::Csv {
            row,
            col: 0,
            msg: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Csv {
                row,
                col: rec.len().min(header.len()) + 1,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let number = |c: usize| -> Result<f64> {
            let s = rec[c].trim();
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Csv {
                row,
                col: c + 1,
                msg: format!("{s:?} is neither a finite number nor {NA}"),
            })
        };
        for &c in &x_cols {
            if rec[c].trim() == NA {
                values.push(f64::NAN);
                observed.push(false);
            } else {
                values.push(number(c)?);
                observed.push(true);
            }
        }
        treatment.push(match rec[w_col].trim() {
            NA => {
                return Err(Error::Csv {
                    row,
                    col: w_col + 1,
                    msg: "treatment may not be missing".into(),
                })
            }
            _ => match number(w_col)? {
                v if v == 0.0 => false,
                v if v == 1.0 => true,
                v => {
                    return Err(Error::Csv {
                        row,
                        col: w_col + 1,
                        msg: format!("treatment must be 0 or 1, found {v}"),
                    })
                }
            },
        });
        if rec[y_col].trim() == NA {
            return Err(Error::Csv {
                row,
                col: y_col + 1,
                msg: "outcome may not be missing".into(),
            });
        }
        outcome.push(number(y_col)?);
    }
    let n = outcome.len();
    ObservationalDataset::new(MaskedMatrix::new(n, p, values, observed)?, treatment, outcome)
}

pub fn read_dataset_path(path: &Path) -> Result<ObservationalDataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// Ground truth for a simulated dataset, row-aligned with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub tau: f64,
    pub propensity: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    /// Covariates before masking.
    pub full_covariates: DMatrix<f64>,
}

impl Truth {
    pub fn from_scenario(g: &GeneratedScenario) -> Self {
        Self {
            tau: g.true_tau,
            propensity: g.true_propensity.clone(),
            mu0: g.true_mu0.clone(),
            mu1: g.true_mu1.clone(),
            full_covariates: g.full_covariates.clone(),
        }
    }

    pub fn nuisances(&self) -> crate::data::NuisanceEstimates {
        crate::data::NuisanceEstimates {
            e_hat: self.propensity.clone(),
            mu0_hat: self.mu0.clone(),
            mu1_hat: self.mu1.clone(),
            crossfit: crate::data::CrossFit::OutOfSample,
        }
    }
}

/// Sidecar columns: `tau, propensity, mu0, mu1, X1..Xp` (unmasked).
pub fn write_truth(t: &Truth, out: impl Write) -> Result<()> {
    let mut w = writer(out);
    let p = t.full_covariates.ncols();
    let mut header = vec!["tau".to_string(), "propensity".into(), "mu0".into(), "mu1".into()];
    header.extend((1..=p).map(|j| format!("X{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..t.propensity.len() {
        let mut rec = vec![fmt_f64(t.tau), fmt_f64(t.propensity[i]), fmt_f64(t.mu0[i]), fmt_f64(t.mu1[i])];
        rec.extend((0..p).map(|j| fmt_f64(t.full_covariates[(i, j)])));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_truth_path(t: &Truth, path: &Path) -> Result<()> {
    write_truth(t, BufWriter::new(File::create(path)?))
}

pub fn read_truth(input: impl Read) -> Result<Truth> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let fixed = ["tau", "propensity", "mu0", "mu1"];
    for (c, name) in fixed.iter().enumerate() {
        if header.get(c).map(String::as_str) != Some(name) {
            return Err(Error::Csv {
                row: 1,
                col: c + 1,
                msg: format!("expected header {name}"),
            });
        }
    }
    let p = header.len() - fixed.len();
    let (mut tau, mut propensity, mut mu0, mut mu1, mut x) = (f64::NAN, Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (idx, rec) in r.records().enumerate() {
        let row = idx + 2;
        let rec = rec.map_err(|e| Error::Csv {
            row,
            col: 0,
            msg: e.to_string(),
        })?;
        let vals: Vec<f64> = rec
            .iter()
            .enumerate()
            .map(|(c, s)| {
                s.trim().parse::<f64>().map_err(|_| Error::Csv {
                    row,
                    col: c + 1,
                    msg: format!("{s:?} is not a number"),
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != header.len() {
            return Err(Error::Csv {
                row,
                col: vals.len() + 1,
                msg: format!("expected {} fields", header.len()),
            });
        }
        tau = vals[0];
        propensity.push(vals[1]);
        mu0.push(vals[2]);
        mu1.push(vals[3]);
        x.extend_from_slice(&vals[4..]);
    }
    let n = propensity.len();
    Ok(Truth {
        tau,
        propensity,
        mu0,
        mu1,
        full_covariates: DMatrix::from_row_slice(n, p, &x),
    })
}

pub fn read_truth_path(path: &Path) -> Result<Truth> {
    read_truth(BufReader::new(File::open(path)?))
}
