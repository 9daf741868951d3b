//! Completion of incomplete covariate matrices: column means, multiple
//! imputation by chained equations, and soft-thresholded SVD.

mod fcs;
mod soft;

use nalgebra::DMatrix;

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};

pub use fcs::{fcs_multiple_impute, FcsOptions, ImputationSet};
pub use soft::{select_lambda, soft_impute, lambda_grid, SoftImputeFit, SoftImputeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputeMethod {
    Mean,
    Fcs,
    SoftImpute,
}

/// A fully observed matrix together with the mask it was completed from.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedMatrix {
    pub values: DMatrix<f64>,
    /// Observed indicators of the source, row-major.
    pub source_mask: Vec<bool>,
    pub method: ImputeMethod,
}

impl CompletedMatrix {
    fn from_source(x: &MaskedMatrix, fill: impl Fn(usize, usize) -> f64, method: ImputeMethod) -> Self {
        let values = DMatrix::from_fn(x.n(), x.p(), |i, j| x.get(i, j).unwrap_or_else(|| fill(i, j)));
        let source_mask = (0..x.n()).flat_map(|i| x.mask_row(i).to_vec()).collect();
        Self {
            values,
            source_mask,
            method,
        }
    }
}

pub(crate) fn observed_column_means(x: &MaskedMatrix) -> Result<Vec<f64>> {
    (0..x.p())
        .map(|j| {
            let c = x.observed_in_column(j);
            if c == 0 {
                return Err(Error::ColumnAllMissing(j));
            }
            Ok((0..x.n()).filter_map(|i| x.get(i, j)).sum::<f64>() / c as f64)
        })
        .collect()
}

/// Replace each missing cell by its column's observed mean.
pub fn mean_impute(x: &MaskedMatrix) -> Result<CompletedMatrix> {
    let means = observed_column_means(x)?;
    Ok(CompletedMatrix::from_source(x, |_, j| means[j], ImputeMethod::Mean))
}
