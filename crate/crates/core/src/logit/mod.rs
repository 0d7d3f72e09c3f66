//! Softmax-parameterized transition models with unit-level covariates.
//!
//! The log-odds of each non-reference column against the last column are
//! linear in the covariates:
//! `log(p_ij / p_iC) = alpha_ij + sum_k beta_ijk z_ijk`.
//! Fitting minimizes the squared distance between observed and predicted
//! column shares, either with plain size weights ("King OLS") or with a
//! working Dirichlet-multinomial covariance ("Brown-Payne style" WLS).

mod design;
mod fit;

pub use design::{CompiledDesign, CovariateDesign, CovariateSource, DesignEntry, Transform};
pub use fit::{
    fit_logit_ols, fit_logit_wls, EcologicalObjective, LogitFit, OptimizerOptions, WlsOptions,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tables::{ProportionTable, UnitMargins};

/// Parameters of the transition model: intercepts for every cell outside
/// the reference column, slopes aligned with the design entries, and an
/// optional overdispersion factor estimated by the WLS fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitModel {
    /// `n_rows x (n_cols - 1)` intercepts; the last column is the reference.
    pub alpha: Vec<Vec<f64>>,
    /// One slope per design entry.
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
}

impl LogitModel {
    /// The covariate-free model whose table equals `table` on every unit.
    /// Entries are clamped away from 0 and 1 so the logits stay finite.
    pub fn constant(table: &ProportionTable) -> Self {
        let n_cols = table.n_cols();
        let alpha = (0..table.n_rows())
            .map(|i| {
                let reference = table.get(i, n_cols - 1).clamp(1e-6, 1.0);
                (0..n_cols - 1)
                    .map(|j| (table.get(i, j).clamp(1e-6, 1.0) / reference).ln())
                    .collect()
            })
            .collect();
        Self {
            alpha,
            beta: vec![],
            phi: None,
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize, n_entries: usize) -> Self {
        Self {
            alpha: vec![vec![0.0; n_cols - 1]; n_rows],
            beta: vec![0.0; n_entries],
            phi: None,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_cols(&self) -> usize {
        self.alpha.first().map_or(0, |r| r.len() + 1)
    }

    pub fn validate_against(&self, design: &CompiledDesign) -> Result<()> {
        if self.n_rows() != design.n_rows() || self.n_cols() != design.n_cols() {
            return Err(Error::DimensionMismatch(format!(
                "model is {}x{} but design expects {}x{}",
                self.n_rows(),
                self.n_cols(),
                design.n_rows(),
                design.n_cols()
            )));
        }
        if self.beta.len() != design.n_entries() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} slopes but design has {} entries",
                self.beta.len(),
                design.n_entries()
            )));
        }
        if self
            .alpha
            .iter()
            .flatten()
            .chain(self.beta.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Validation("non-finite model parameters".into()));
        }
        Ok(())
    }
}

/// Numerically stable softmax of a linear-predictor row with an implicit
/// trailing zero for the reference column.
pub(crate) fn softmax_with_reference(etas: &[f64]) -> Vec<f64> {
    let max = etas.iter().fold(0.0f64, |m, &e| m.max(e));
    let mut out: Vec<f64> = etas.iter().map(|&e| (e - max).exp()).collect();
    out.push((-max).exp());
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Computes the model-implied transition rows for one unit given its
/// covariate vector `z` (as produced by [`CompiledDesign::covariates_for`]).
pub(crate) fn unit_rows(model: &LogitModel, design: &CompiledDesign, z: &[f64]) -> Vec<Vec<f64>> {
    let n_rows = model.n_rows();
    let n_cols = model.n_cols();
    let mut etas = vec![vec![0.0; n_cols - 1]; n_rows];
    for i in 0..n_rows {
        etas[i].copy_from_slice(&model.alpha[i]);
    }
    for (m, targets) in design.targets().iter().enumerate() {
        for &(col, sign) in &targets.cols {
            etas[targets.row][col] += sign * model.beta[m] * z[m];
        }
    }
    etas.iter().map(|row| softmax_with_reference(row)).collect()
}

/// The model-implied transition table for one unit.
pub fn transition_probs(
    model: &LogitModel,
    design: &CompiledDesign,
    unit: &UnitMargins,
) -> Result<ProportionTable> {
    model.validate_against(design)?;
    let z = design.covariates_for(unit)?;
    ProportionTable::new(unit_rows(model, design, &z))
}

/// The model-implied column shares for one unit: the accounting-equation
/// prediction `yhat_j = sum_i x_i p_ij`.
pub fn predicted_shares(
    model: &LogitModel,
    design: &CompiledDesign,
    unit: &UnitMargins,
) -> Result<Vec<f64>> {
    model.validate_against(design)?;
    let z = design.covariates_for(unit)?;
    let rows = unit_rows(model, design, &z);
    let x = unit.row_shares();
    Ok((0..model.n_cols())
        .map(|j| (0..model.n_rows()).map(|i| x[i] * rows[i][j]).sum())
        .collect())
}
