//! Margin-matching adjustment by iterative proportional fitting.
//!
//! An estimated transition table rarely reproduces a station's observed
//! column totals exactly. Alternating row and column rescaling of the
//! expected-count table converges to the unique table with the observed
//! margins and the same odds-ratio structure as the estimate (every 2x2
//! cross-product ratio is invariant under row/column scaling).

use crate::error::{Error, Result};
use crate::logit::{transition_probs, CompiledDesign, LogitModel};
use crate::tables::{common_margin_dims, ProportionTable, UnitMargins};

/// Default convergence tolerance on margins, in absolute counts.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Result of one margin-fitting run.
#[derive(Debug, Clone)]
pub struct IpfOutcome {
    /// Real-valued expected counts with the target margins.
    pub table: Vec<Vec<f64>>,
    /// Full row+column sweeps performed.
    pub iterations: usize,
    /// Largest absolute margin discrepancy at exit.
    pub max_discrepancy: f64,
    /// Discrepancy after each sweep (starting with the seed's own).
    pub trace: Vec<f64>,
}

fn max_margin_discrepancy(table: &[Vec<f64>], rows: &[f64], cols: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in table.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        worst = worst.max((sum - rows[i]).abs());
    }
    for (j, &target) in cols.iter().enumerate() {
        let sum: f64 = table.iter().map(|r| r[j]).sum();
        worst = worst.max((sum - target).abs());
    }
    worst
}

/// Scales the expected-count table `est[i][j] * n_i+` until both margin
/// sets match the observed ones within `tol` counts. Zero cells in the
/// estimate stay zero; if that makes the margins unattainable the run
/// reports a structural zero instead of patching it.
pub fn adjust_to_margins(
    est: &ProportionTable,
    m: &UnitMargins,
    tol: f64,
    max_iter: usize,
) -> Result<IpfOutcome> {
    if est.n_rows() != m.n_rows() || est.n_cols() != m.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {}x{} but margins are {}x{}",
            est.n_rows(),
            est.n_cols(),
            m.n_rows(),
            m.n_cols()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Validation(format!(
            "tolerance must be > 0, got {tol}"
        )));
    }
    let rows: Vec<f64> = m.row_totals().iter().map(|&v| v as f64).collect();
    let cols: Vec<f64> = m.col_totals().iter().map(|&v| v as f64).collect();

    let mut table: Vec<Vec<f64>> = (0..est.n_rows())
        .map(|i| est.row(i).iter().map(|&p| p * rows[i]).collect())
        .collect();

    // A positive column target with no mass available in that column can
    // never be met by scaling.
    for (j, &target) in cols.iter().enumerate() {
        if target > 0.0 && table.iter().map(|r| r[j]).sum::<f64>() == 0.0 {
            return Err(Error::StructuralZero(format!(
                "column {j} has target {target} but the seed places no mass in it"
            )));
        }
    }

    let mut trace = vec![max_margin_discrepancy(&table, &rows, &cols)];
    let mut iterations = 0;
    while trace[iterations] > tol {
        if iterations >= max_iter {
            return Err(Error::IpfNoConvergence {
                achieved: trace[iterations],
                iterations,
                tol,
                last: table,
            });
        }
        for (i, row) in table.iter_mut().enumerate() {
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                let factor = rows[i] / sum;
                for v in row.iter_mut() {
                    *v *= factor;
                }
            } else if rows[i] > 0.0 {
                return Err(Error::StructuralZero(format!(
                    "row {i} has target {} but no remaining mass",
                    rows[i]
                )));
            }
        }
        for j in 0..cols.len() {
            let sum: f64 = table.iter().map(|r| r[j]).sum();
            if sum > 0.0 {
                let factor = cols[j] / sum;
                for row in table.iter_mut() {
                    row[j] *= factor;
                }
            } else if cols[j] > 0.0 {
                return Err(Error::StructuralZero(format!(
                    "column {j} has target {} but no remaining mass",
                    cols[j]
                )));
            }
        }
        iterations += 1;
        trace.push(max_margin_discrepancy(&table, &rows, &cols));
    }

    Ok(IpfOutcome {
        max_discrepancy: trace[iterations],
        iterations,
        table,
        trace,
    })
}

/// Lifts zero cells to a small positive floor and renormalizes the rows.
///
/// Bound-projected estimates often carry exact zeros, which margin fitting
/// treats as structural and may find unattainable. Flooring re-admits those
/// transitions at negligible probability so every station stays feasible.
pub fn floor_positive(est: &ProportionTable, floor: f64) -> Result<ProportionTable> {
    if !(floor > 0.0 && floor < 0.5) {
        return Err(Error::Validation(format!(
            "floor must be in (0, 0.5), got {floor}"
        )));
    }
    ProportionTable::from_unnormalized(
        (0..est.n_rows())
            .map(|i| est.row(i).iter().map(|&p| p.max(floor)).collect())
            .collect(),
    )
}

/// Per-unit source of estimated transition tables for [`adjusted_overall`].
pub enum UnitEstimator<'a> {
    /// The same table on every unit (Goodman-style estimates).
    Constant(&'a ProportionTable),
    /// A covariate model evaluated per unit.
    Model {
        model: &'a LogitModel,
        design: &'a CompiledDesign,
    },
}

impl UnitEstimator<'_> {
    fn table_for(&self, unit: &UnitMargins) -> Result<ProportionTable> {
        match self {
            UnitEstimator::Constant(t) => Ok((*t).clone()),
            UnitEstimator::Model { model, design } => transition_probs(model, design, unit),
        }
    }
}

/// Adjusts the per-unit estimates to every station's margins, sums the
/// adjusted count tables, and returns the pooled row proportions.
pub fn adjusted_overall(
    estimator: UnitEstimator<'_>,
    data: &[UnitMargins],
    tol: f64,
    max_iter: usize,
) -> Result<ProportionTable> {
    let (n_rows, n_cols) = common_margin_dims(data)?;
    let mut sums = vec![vec![0.0f64; n_cols]; n_rows];
    for unit in data {
        let est = estimator
            .table_for(unit)
            .map_err(|e| e.for_unit(unit.unit_id()))?;
        let adjusted =
            adjust_to_margins(&est, unit, tol, max_iter).map_err(|e| e.for_unit(unit.unit_id()))?;
        for i in 0..n_rows {
            for j in 0..n_cols {
                sums[i][j] += adjusted.table[i][j];
            }
        }
    }
    for (i, row) in sums.iter().enumerate() {
        if !(row.iter().sum::<f64>() > 0.0) {
            return Err(Error::EmptyRowMargin { row: i });
        }
    }
    ProportionTable::from_unnormalized(sums)
}
