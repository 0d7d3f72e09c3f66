//! Linear ecological regression on the accounting identity.
//!
//! Assuming a transition table that is constant across polling stations,
//! each observed column share satisfies
//! `y_j = p_1j + sum_{i>=2} x_i (p_ij - p_1j) + e_j`,
//! so a per-column least-squares fit on the margin proportions recovers the
//! table. Rows are mapped back onto the probability simplex afterwards,
//! which reproduces the truncated 0.000 entries such estimates often show.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tables::{common_margin_dims, ProportionTable, UnitMargins};

/// An estimated transition table with optional classical standard errors.
#[derive(Debug, Clone)]
pub struct TransitionEstimate {
    pub table: ProportionTable,
    /// Per-cell standard errors of the *unprojected* estimates, when the
    /// regression had enough degrees of freedom.
    pub stderr: Option<Vec<Vec<f64>>>,
    pub method: String,
}

/// Relative singular-value cutoff below which the margin design is treated
/// as collinear.
const RANK_TOL: f64 = 1e-10;

/// Internal consistency bound: fitted rows must sum to 1 before projection.
const CONSISTENCY_TOL: f64 = 1e-8;

/// Fits the per-column ecological regression. `size_weights` weighs each
/// station by its total count; unweighted treats stations equally.
pub fn fit_goodman(data: &[UnitMargins], size_weights: bool) -> Result<TransitionEstimate> {
    let (n_rows, n_cols) = common_margin_dims(data)?;
    if data.len() < n_rows {
        return Err(Error::TooFewUnits {
            need: n_rows,
            got: data.len(),
        });
    }

    // Normal equations for the design [1, x_2, ..., x_R] shared by all
    // columns: A = X'WX, and one right-hand side per column of y.
    let mut a = DMatrix::<f64>::zeros(n_rows, n_rows);
    let mut b = DMatrix::<f64>::zeros(n_rows, n_cols);
    let mut phi = DVector::<f64>::zeros(n_rows);
    for m in data {
        let w = if size_weights { m.total() as f64 } else { 1.0 };
        phi[0] = 1.0;
        for i in 1..n_rows {
            phi[i] = m.row_share(i);
        }
        for r in 0..n_rows {
            for c in 0..n_rows {
                a[(r, c)] += w * phi[r] * phi[c];
            }
            for j in 0..n_cols {
                b[(r, j)] += w * phi[r] * m.col_share(j);
            }
        }
    }

    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_min > RANK_TOL * s_max) {
        return Err(Error::RankDeficient(
            "margin proportions are collinear across units".into(),
        ));
    }
    let coef = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::Numeric(format!("least-squares solve failed: {e}")))?;

    // Recover the table: p_1j = intercept_j, p_ij = intercept_j + slope_ij.
    let mut raw = vec![vec![0.0; n_cols]; n_rows];
    for j in 0..n_cols {
        raw[0][j] = coef[(0, j)];
        for i in 1..n_rows {
            raw[i][j] = coef[(0, j)] + coef[(i, j)];
        }
    }

    // The column shares sum to 1 in every unit, so the fitted rows must sum
    // to 1 up to solver rounding. A breach signals a numerical problem.
    for (i, row) in raw.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > CONSISTENCY_TOL {
            return Err(Error::Numeric(format!(
                "fitted row {i} sums to {sum}, outside the {CONSISTENCY_TOL:e} consistency bound"
            )));
        }
    }

    let stderr = standard_errors(data, size_weights, &a, &coef, n_rows, n_cols);

    let table = ProportionTable::new(raw.iter().map(|r| simplex_project(r)).collect())?;
    Ok(TransitionEstimate {
        table,
        stderr,
        method: "goodman".into(),
    })
}

fn standard_errors(
    data: &[UnitMargins],
    size_weights: bool,
    a: &DMatrix<f64>,
    coef: &DMatrix<f64>,
    n_rows: usize,
    n_cols: usize,
) -> Option<Vec<Vec<f64>>> {
    let n = data.len();
    if n <= n_rows {
        return None;
    }
    let a_inv = a.clone().try_inverse()?;
    let dof = (n - n_rows) as f64;
    let mut out = vec![vec![0.0; n_cols]; n_rows];
    for j in 0..n_cols {
        let mut wrss = 0.0;
        for m in data {
            let w = if size_weights { m.total() as f64 } else { 1.0 };
            let mut fitted = coef[(0, j)];
            for i in 1..n_rows {
                fitted += coef[(i, j)] * m.row_share(i);
            }
            wrss += w * (m.col_share(j) - fitted).powi(2);
        }
        let sigma2 = wrss / dof;
        // var(p_1j) = var(b0); var(p_ij) = var(b0) + var(bi) + 2 cov(b0, bi)
        out[0][j] = (sigma2 * a_inv[(0, 0)]).max(0.0).sqrt();
        for i in 1..n_rows {
            let v = a_inv[(0, 0)] + a_inv[(i, i)] + 2.0 * a_inv[(0, i)];
            out[i][j] = (sigma2 * v).max(0.0).sqrt();
        }
    }
    Some(out)
}

/// Euclidean projection of a vector onto the probability simplex.
///
/// Uses the sorted-threshold algorithm: entries are shifted by a common
/// constant and clipped at zero, which keeps their order and leaves already
/// feasible vectors untouched.
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    let out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    debug_assert!(n == 0 || (out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::{margins_of, UnitCounts};
    use proptest::prelude::*;

    #[test]
    fn simplex_project_keeps_feasible_points() {
        let p = simplex_project(&[0.3, 0.7]);
        assert_eq!(p, vec![0.3, 0.7]);
    }

    #[test]
    fn simplex_project_clamps_two_dim_case() {
        let p = simplex_project(&[-0.1, 1.1]);
        assert!((p[0] - 0.0).abs() < 1e-15);
        assert!((p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_project_shifts_uniformly_in_interior() {
        // sum = 1.2 over three coordinates, all stay positive after the
        // shift of 0.2/3, so the projection subtracts it from each.
        let p = simplex_project(&[0.5, 0.4, 0.3]);
        let expect = [0.5 - 0.2 / 3.0, 0.4 - 0.2 / 3.0, 0.3 - 0.2 / 3.0];
        for (a, e) in p.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn simplex_project_satisfies_kkt(
            v in proptest::collection::vec(-2.0f64..2.0, 2..6)
        ) {
            let p = simplex_project(&v);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
            // Idempotent.
            let pp = simplex_project(&p);
            for (a, b) in p.iter().zip(&pp) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            // Order preserved.
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] > v[j] {
                        prop_assert!(p[i] >= p[j] - 1e-12);
                    }
                }
            }
            // KKT: the positive coordinates share one multiplier
            // theta = v_k - p_k, and zero coordinates have v_k <= theta.
            let theta = v.iter().zip(&p)
                .filter(|(_, &pk)| pk > 1e-12)
                .map(|(vk, pk)| vk - pk)
                .next()
                .unwrap();
            for (vk, &pk) in v.iter().zip(&p) {
                if pk > 1e-12 {
                    prop_assert!((vk - pk - theta).abs() < 1e-9);
                } else {
                    prop_assert!(vk - theta <= 1e-9);
                }
            }
        }
    }

    /// Builds noiseless margins from a constant transition table: counts are
    /// chosen so that x * n and the implied cells are exact integers.
    fn noiseless_margins(table: &[[f64; 2]; 2]) -> Vec<UnitMargins> {
        let xs = [0.2, 0.4, 0.6, 0.8];
        let n = 1000u64;
        xs.iter()
            .enumerate()
            .map(|(k, &x2)| {
                let n2 = (x2 * n as f64).round() as u64;
                let n1 = n - n2;
                let c11 = (n1 as f64 * table[0][0]).round() as u64;
                let c21 = (n2 as f64 * table[1][0]).round() as u64;
                let counts = vec![vec![c11, n1 - c11], vec![c21, n2 - c21]];
                margins_of(&UnitCounts::new(format!("u{k}"), counts).unwrap())
            })
            .collect()
    }

    #[test]
    fn recovers_constant_table_exactly_on_noiseless_data() {
        let truth = [[0.8, 0.2], [0.4, 0.6]];
        let data = noiseless_margins(&truth);
        for weighted in [true, false] {
            let est = fit_goodman(&data, weighted).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert!(
                        (est.table.get(i, j) - truth[i][j]).abs() < 1e-10,
                        "cell ({i},{j}) = {}",
                        est.table.get(i, j)
                    );
                }
            }
        }
    }

    #[test]
    fn two_point_regression_matches_hand_solution() {
        // Two stations with positive within-unit slopes but a negative
        // ecological slope: points (x2, y2) = (0.2, 0.74) and (0.8, 0.36).
        // Hand solution: slope -19/30, intercept 13/15, so
        // p_12 = 13/15 and p_22 = 7/30.
        let a = UnitCounts::new("a", vec![vec![240, 560], vec![20, 180]]).unwrap();
        let b = UnitCounts::new("b", vec![vec![160, 40], vec![480, 320]]).unwrap();
        let data = vec![margins_of(&a), margins_of(&b)];
        let est = fit_goodman(&data, true).unwrap();
        assert!((est.table.get(0, 1) - 13.0 / 15.0).abs() < 1e-12);
        assert!((est.table.get(1, 1) - 7.0 / 30.0).abs() < 1e-12);
        // Both unit slopes are positive while the fitted ecological slope
        // p_22 - p_12 is negative.
        let f = |u: &UnitCounts, i: usize| u.row_proportions(i).unwrap()[1];
        assert!(f(&a, 1) - f(&a, 0) > 0.0);
        assert!(f(&b, 1) - f(&b, 0) > 0.0);
        assert!(est.table.get(1, 1) - est.table.get(0, 1) < 0.0);
    }

    #[test]
    fn collinear_margins_are_rejected() {
        // Identical margin proportions on every station.
        let data: Vec<UnitMargins> = (0..5)
            .map(|k| UnitMargins::new(format!("u{k}"), vec![40, 60], vec![50, 50]).unwrap())
            .collect();
        assert!(matches!(
            fit_goodman(&data, true),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn too_few_units_is_reported() {
        let u = UnitCounts::new("a", vec![vec![3, 1, 2], vec![1, 1, 1], vec![2, 2, 2]]).unwrap();
        assert!(matches!(
            fit_goodman(&[margins_of(&u)], true),
            Err(Error::TooFewUnits { need: 3, got: 1 })
        ));
    }
}
