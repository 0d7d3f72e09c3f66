//! Core data model for individual and aggregated electoral data.
//!
//! A dataset is a collection of polling-station tables cross-classifying a
//! prior choice `X` (rows) against a current choice `Y` (columns). With
//! individual data the full count table of each station is known; with
//! aggregated (ecological) data only its row and column margins are.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the row-stochastic invariant of [`ProportionTable`].
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Individual-level count table of one polling station: entry `(i, j)` is
/// the number of voters with `X = i` and `Y = j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitCounts {
    unit_id: String,
    counts: Vec<Vec<u64>>,
}

impl UnitCounts {
    /// Builds a station table. Requires a rectangular grid with at least two
    /// rows and two columns and at least one positive entry.
    pub fn new(unit_id: impl Into<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let unit_id = unit_id.into();
        if counts.len() < 2 {
            return Err(Error::Validation(format!(
                "unit '{unit_id}': need at least 2 row categories, got {}",
                counts.len()
            )));
        }
        let n_cols = counts[0].len();
        if n_cols < 2 {
            return Err(Error::Validation(format!(
                "unit '{unit_id}': need at least 2 column categories, got {n_cols}"
            )));
        }
        if counts.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Validation(format!(
                "unit '{unit_id}': ragged count grid"
            )));
        }
        if counts.iter().flatten().all(|&c| c == 0) {
            return Err(Error::Validation(format!(
                "unit '{unit_id}': all counts are zero"
            )));
        }
        Ok(Self { unit_id, counts })
    }

    pub fn unit_id(&self) -> &str {
        &self.unit_id
    }

    pub fn n_rows(&self) -> usize {
        self.counts.len()
    }

    pub fn n_cols(&self) -> usize {
        self.counts[0].len()
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row][col]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_total(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    pub fn col_total(&self, col: usize) -> u64 {
        self.counts.iter().map(|r| r[col]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Within-unit proportions `f_ij = n_ij / n_i+` for row `i`, or `None`
    /// when the row is empty.
    pub fn row_proportions(&self, row: usize) -> Option<Vec<f64>> {
        let total = self.row_total(row);
        if total == 0 {
            return None;
        }
        Some(
            self.counts[row]
                .iter()
                .map(|&c| c as f64 / total as f64)
                .collect(),
        )
    }
}

/// Ecological observation for one polling station: the row totals `n_i+`,
/// the column totals `n_+j`, and any externally measured covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitMargins {
    unit_id: String,
    row_totals: Vec<u64>,
    col_totals: Vec<u64>,
    covariates: BTreeMap<String, f64>,
}

impl UnitMargins {
    /// Builds a margin record. Row and column totals must agree on a
    /// positive grand total.
    pub fn new(
        unit_id: impl Into<String>,
        row_totals: Vec<u64>,
        col_totals: Vec<u64>,
    ) -> Result<Self> {
        let unit_id = unit_id.into();
        if row_totals.len() < 2 || col_totals.len() < 2 {
            return Err(Error::Validation(format!(
                "unit '{unit_id}': need at least 2 categories per margin"
            )));
        }
        let row_sum: u64 = row_totals.iter().sum();
        let col_sum: u64 = col_totals.iter().sum();
        if row_sum != col_sum {
            return Err(Error::Validation(format!(
                "unit '{unit_id}': row totals sum to {row_sum} but column totals sum to {col_sum}"
            )));
        }
        if row_sum == 0 {
            return Err(Error::Validation(format!(
                "unit '{unit_id}': empty station (grand total 0)"
            )));
        }
        Ok(Self {
            unit_id,
            row_totals,
            col_totals,
            covariates: BTreeMap::new(),
        })
    }

    pub fn with_covariates(mut self, covariates: BTreeMap<String, f64>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn unit_id(&self) -> &str {
        &self.unit_id
    }

    pub fn n_rows(&self) -> usize {
        self.row_totals.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_totals.len()
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    pub fn col_totals(&self) -> &[u64] {
        &self.col_totals
    }

    pub fn total(&self) -> u64 {
        self.row_totals.iter().sum()
    }

    /// Marginal row proportion `x_i = n_i+ / n_++`.
    pub fn row_share(&self, row: usize) -> f64 {
        self.row_totals[row] as f64 / self.total() as f64
    }

    /// Marginal column proportion `y_j = n_+j / n_++`.
    pub fn col_share(&self, col: usize) -> f64 {
        self.col_totals[col] as f64 / self.total() as f64
    }

    pub fn row_shares(&self) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.row_share(i)).collect()
    }

    pub fn col_shares(&self) -> Vec<f64> {
        (0..self.n_cols()).map(|j| self.col_share(j)).collect()
    }

    pub fn covariates(&self) -> &BTreeMap<String, f64> {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<f64> {
        self.covariates.get(name).copied()
    }
}

/// A row-stochastic table of proportions: every row sums to 1 within
/// [`ROW_SUM_TOL`] and every entry lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ProportionTable {
    rows: Vec<Vec<f64>>,
}

impl ProportionTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::Validation("empty proportion table".into()));
        }
        let n_cols = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::Validation("ragged proportion table".into()));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return Err(Error::Validation(format!(
                    "row {i}: entries must lie in [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Validation(format!(
                    "row {i} sums to {sum}, expected 1 within {ROW_SUM_TOL:e}"
                )));
            }
        }
        Ok(Self { rows })
    }

    /// Normalizes each row of a non-negative grid to sum to 1.
    pub fn from_unnormalized(rows: Vec<Vec<f64>>) -> Result<Self> {
        let normalized = rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let sum: f64 = row.iter().sum();
                if !(sum > 0.0) || !sum.is_finite() {
                    return Err(Error::Validation(format!(
                        "row {i}: cannot normalize, sum is {sum}"
                    )));
                }
                Ok(row.into_iter().map(|v| v / sum).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Self::new(normalized)
    }

    pub fn uniform(n_rows: usize, n_cols: usize) -> Self {
        let v = 1.0 / n_cols as f64;
        Self {
            rows: vec![vec![v; n_cols]; n_rows],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.rows[0].len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.rows[row][col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.rows[row]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

impl TryFrom<Vec<Vec<f64>>> for ProportionTable {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<ProportionTable> for Vec<Vec<f64>> {
    fn from(t: ProportionTable) -> Self {
        t.rows
    }
}

/// Checks that every unit in a dataset has the same table dimensions and
/// returns them.
pub fn common_dims(units: &[UnitCounts]) -> Result<(usize, usize)> {
    let first = units
        .first()
        .ok_or_else(|| Error::Validation("empty dataset".into()))?;
    let dims = (first.n_rows(), first.n_cols());
    for u in units {
        if (u.n_rows(), u.n_cols()) != dims {
            return Err(Error::DimensionMismatch(format!(
                "unit '{}' is {}x{}, expected {}x{}",
                u.unit_id(),
                u.n_rows(),
                u.n_cols(),
                dims.0,
                dims.1
            )));
        }
    }
    Ok(dims)
}

/// Same as [`common_dims`] but for margin records.
pub fn common_margin_dims(units: &[UnitMargins]) -> Result<(usize, usize)> {
    let first = units
        .first()
        .ok_or_else(|| Error::Validation("empty dataset".into()))?;
    let dims = (first.n_rows(), first.n_cols());
    for u in units {
        if (u.n_rows(), u.n_cols()) != dims {
            return Err(Error::DimensionMismatch(format!(
                "unit '{}' has margins {}x{}, expected {}x{}",
                u.unit_id(),
                u.n_rows(),
                u.n_cols(),
                dims.0,
                dims.1
            )));
        }
    }
    Ok(dims)
}

/// Marginalizes an individual-data table into its ecological observation.
pub fn margins_of(t: &UnitCounts) -> UnitMargins {
    let row_totals = (0..t.n_rows()).map(|i| t.row_total(i)).collect();
    let col_totals = (0..t.n_cols()).map(|j| t.col_total(j)).collect();
    UnitMargins {
        unit_id: t.unit_id().to_string(),
        row_totals,
        col_totals,
        covariates: BTreeMap::new(),
    }
}

/// Pools individual-data tables across units into the overall proportion
/// table: entry `(i, j)` is `n_+ij / n_+i+`, the size-weighted average of
/// the within-unit proportions.
pub fn aggregate_units(units: &[UnitCounts]) -> Result<ProportionTable> {
    let (n_rows, n_cols) = common_dims(units)?;
    let mut sums = vec![vec![0u64; n_cols]; n_rows];
    for u in units {
        for i in 0..n_rows {
            for j in 0..n_cols {
                sums[i][j] += u.get(i, j);
            }
        }
    }
    let rows = sums
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                return Err(Error::EmptyRowMargin { row: i });
            }
            Ok(row.iter().map(|&c| c as f64 / total as f64).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    ProportionTable::new(rows)
}

/// Residual of the accounting identity for one station: component `j` is
/// `y_j - sum_i x_i f_ij`. Zero in every component when `f` is the
/// station's own proportion table.
pub fn accounting_residual(m: &UnitMargins, f: &ProportionTable) -> Result<Vec<f64>> {
    if m.n_rows() != f.n_rows() || m.n_cols() != f.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "margins are {}x{} but table is {}x{}",
            m.n_rows(),
            m.n_cols(),
            f.n_rows(),
            f.n_cols()
        )));
    }
    let x = m.row_shares();
    Ok((0..m.n_cols())
        .map(|j| {
            let predicted: f64 = (0..m.n_rows()).map(|i| x[i] * f.get(i, j)).sum();
            m.col_share(j) - predicted
        })
        .collect())
}
