//! Evaluation harness: reconstruct model-implied overall tables, fit the
//! individual-data logistic oracle, and score estimates against truth.
//!
//! A covariate model implies a different transition table on every station,
//! so comparing it with the individual data means reconstructing the
//! estimated table per station and pooling with the same size weights the
//! raw aggregation uses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logit::{unit_rows, CompiledDesign, CovariateDesign, LogitModel};
use crate::tables::{common_dims, margins_of, ProportionTable, UnitCounts, UnitMargins};

/// Pools the model-implied station tables with the observed row sizes:
/// `fhat_ij = sum_u n_ui+ p_uij / sum_u n_ui+`.
pub fn reconstruct_overall(
    model: &LogitModel,
    design: &CompiledDesign,
    data: &[UnitMargins],
) -> Result<ProportionTable> {
    model.validate_against(design)?;
    if data.is_empty() {
        return Err(Error::Validation("empty dataset".into()));
    }
    let n_rows = design.n_rows();
    let n_cols = design.n_cols();
    let mut weighted = vec![vec![0.0; n_cols]; n_rows];
    let mut weight = vec![0.0; n_rows];
    for u in data {
        let z = design.covariates_for(u)?;
        let rows = unit_rows(model, design, &z);
        for i in 0..n_rows {
            let w = u.row_totals()[i] as f64;
            weight[i] += w;
            for j in 0..n_cols {
                weighted[i][j] += w * rows[i][j];
            }
        }
    }
    for (i, &w) in weight.iter().enumerate() {
        if !(w > 0.0) {
            return Err(Error::EmptyRowMargin { row: i });
        }
    }
    ProportionTable::from_unnormalized(weighted)
}

#[derive(Debug, Clone)]
pub struct IndividualFitOptions {
    /// Convergence tolerance on the score, normalized by the total count.
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficient magnitude cap; hitting it flags separation.
    pub coef_cap: f64,
    /// Freeze the slopes at these values and fit intercepts only.
    pub fixed_beta: Option<Vec<f64>>,
}

impl Default for IndividualFitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200,
            coef_cap: 30.0,
            fixed_beta: None,
        }
    }
}

/// Maximum-likelihood fit on the true individual data.
#[derive(Debug, Clone)]
pub struct IndividualFit {
    pub model: LogitModel,
    pub log_likelihood: f64,
    /// Rows whose coefficients hit the cap (quasi-separation).
    pub separation_warnings: Vec<String>,
}

/// Fits the row-wise multinomial logit by maximum likelihood on the true
/// within-unit splits. This is the non-ecological oracle: at its optimum
/// the reconstructed overall proportions reproduce the raw individual
/// proportions exactly (the intercept score equations force it).
pub fn fit_individual_logistic(
    units: &[UnitCounts],
    design: &CovariateDesign,
    opts: &IndividualFitOptions,
) -> Result<IndividualFit> {
    let (n_rows, n_cols) = common_dims(units)?;
    design.validate(n_rows, n_cols)?;
    let margins: Vec<UnitMargins> = units.iter().map(margins_of).collect();
    let compiled = CompiledDesign::new(design.clone(), &margins)?;
    let z: Vec<Vec<f64>> = margins
        .iter()
        .map(|m| compiled.covariates_for(m))
        .collect::<Result<_>>()?;

    if let Some(beta) = &opts.fixed_beta {
        if beta.len() != design.n_entries() {
            return Err(Error::DimensionMismatch(format!(
                "{} fixed slopes for {} design entries",
                beta.len(),
                design.n_entries()
            )));
        }
    }

    let k = n_cols - 1;
    let mut model = LogitModel::zeros(n_rows, n_cols, design.n_entries());
    if let Some(beta) = &opts.fixed_beta {
        model.beta = beta.clone();
    }
    let mut warnings = vec![];
    let mut total_ll = 0.0;

    // Rows are separate likelihoods: the parameters of row i only touch
    // voters with X = i.
    for i in 0..n_rows {
        let row_total: u64 = units.iter().map(|u| u.row_total(i)).sum();
        if row_total == 0 {
            return Err(Error::EmptyRowMargin { row: i });
        }
        // This row's slope positions within the design.
        let betas: Vec<usize> = compiled
            .targets()
            .iter()
            .enumerate()
            .filter(|(_, t)| t.row == i)
            .map(|(m, _)| m)
            .collect();
        let free_beta = opts.fixed_beta.is_none();
        let n_params = k + if free_beta { betas.len() } else { 0 };

        let mut params = DVector::<f64>::zeros(n_params);
        let mut ll = row_loglik(units, &compiled, &z, i, &params, &betas, &model, free_beta);
        let mut capped = false;
        for _ in 0..opts.max_iter {
            let (grad, hess) =
                row_score(units, &compiled, &z, i, &params, &betas, &model, free_beta);
            if grad.amax() / row_total as f64 <= opts.tol {
                break;
            }
            // Newton step on the concave log-likelihood, with a ridge if
            // the information matrix is numerically singular.
            let mut h = hess.clone();
            let mut step = None;
            for _ in 0..12 {
                if let Some(ch) = h.clone().cholesky() {
                    step = Some(ch.solve(&grad));
                    break;
                }
                for d in 0..n_params {
                    h[(d, d)] += 1e-8 * (1.0 + h[(d, d)].abs());
                }
            }
            let Some(step) = step else {
                return Err(Error::Numeric(format!(
                    "singular information matrix for row {i}"
                )));
            };
            // Backtrack until the likelihood improves; coefficients are
            // clamped at the cap to keep separated fits finite.
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let mut candidate = &params + t * &step;
                let mut hit_cap = false;
                for v in candidate.iter_mut() {
                    if v.abs() > opts.coef_cap {
                        *v = v.signum() * opts.coef_cap;
                        hit_cap = true;
                    }
                }
                let movement = (&candidate - &params).amax();
                let cand_ll = row_loglik(
                    units, &compiled, &z, i, &candidate, &betas, &model, free_beta,
                );
                if cand_ll >= ll - 1e-12 {
                    params = candidate;
                    ll = cand_ll;
                    capped = capped || hit_cap;
                    moved = movement > 1e-14;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if capped {
            warnings.push(format!(
                "row {i}: coefficients capped at {} (quasi-separation)",
                opts.coef_cap
            ));
        } else {
            let (grad, _) = row_score(units, &compiled, &z, i, &params, &betas, &model, free_beta);
            if grad.amax() / row_total as f64 > opts.tol * 1e4 {
                return Err(Error::Numeric(format!(
                    "individual logistic fit for row {i} did not converge"
                )));
            }
        }
        for (c, v) in params.iter().take(k).enumerate() {
            model.alpha[i][c] = *v;
        }
        if free_beta {
            for (slot, &m) in betas.iter().enumerate() {
                model.beta[m] = params[k + slot];
            }
        }
        total_ll += ll;
    }

    Ok(IndividualFit {
        model,
        log_likelihood: total_ll,
        separation_warnings: warnings,
    })
}

/// Linear predictors of one row for one unit under row parameters `params`
/// (first `k` intercepts, then this row's slopes when free).
fn row_etas(
    compiled: &CompiledDesign,
    z: &[f64],
    params: &DVector<f64>,
    betas: &[usize],
    model: &LogitModel,
    free_beta: bool,
) -> Vec<f64> {
    let k = compiled.n_cols() - 1;
    let mut etas: Vec<f64> = (0..k).map(|c| params[c]).collect();
    for (slot, &m) in betas.iter().enumerate() {
        let beta = if free_beta {
            params[k + slot]
        } else {
            model.beta[m]
        };
        let t = &compiled.targets()[m];
        for &(col, sign) in &t.cols {
            etas[col] += sign * beta * z[m];
        }
    }
    etas
}

/// Grouped multinomial log-likelihood of row `i`.
#[allow(clippy::too_many_arguments)]
fn row_loglik(
    units: &[UnitCounts],
    compiled: &CompiledDesign,
    z: &[Vec<f64>],
    i: usize,
    params: &DVector<f64>,
    betas: &[usize],
    model: &LogitModel,
    free_beta: bool,
) -> f64 {
    let mut ll = 0.0;
    for (u, zu) in units.iter().zip(z) {
        if u.row_total(i) == 0 {
            continue;
        }
        let etas = row_etas(compiled, zu, params, betas, model, free_beta);
        let probs = crate::logit::softmax_with_reference(&etas);
        for (j, &p) in probs.iter().enumerate() {
            let n = u.get(i, j);
            if n > 0 {
                ll += n as f64 * p.max(1e-300).ln();
            }
        }
    }
    ll
}

/// Score vector and Fisher information of row `i`'s likelihood.
#[allow(clippy::too_many_arguments)]
fn row_score(
    units: &[UnitCounts],
    compiled: &CompiledDesign,
    z: &[Vec<f64>],
    i: usize,
    params: &DVector<f64>,
    betas: &[usize],
    model: &LogitModel,
    free_beta: bool,
) -> (DVector<f64>, DMatrix<f64>) {
    let k = compiled.n_cols() - 1;
    let n_params = params.len();
    let mut grad = DVector::<f64>::zeros(n_params);
    let mut info = DMatrix::<f64>::zeros(n_params, n_params);
    // Jacobian d eta_c / d param_p for one unit, built per unit because the
    // slope columns carry the unit's covariate values.
    let mut jac = DMatrix::<f64>::zeros(k, n_params);
    for (u, zu) in units.iter().zip(z) {
        let n_i = u.row_total(i);
        if n_i == 0 {
            continue;
        }
        let etas = row_etas(compiled, zu, params, betas, model, free_beta);
        let probs = crate::logit::softmax_with_reference(&etas);

        jac.fill(0.0);
        for c in 0..k {
            jac[(c, c)] = 1.0;
        }
        if free_beta {
            for (slot, &m) in betas.iter().enumerate() {
                let t = &compiled.targets()[m];
                for &(col, sign) in &t.cols {
                    jac[(col, k + slot)] += sign * zu[m];
                }
            }
        }

        // Score in eta-space: n_ic - n_i p_ic for c < k.
        let mut s = DVector::<f64>::zeros(k);
        for c in 0..k {
            s[c] = u.get(i, c) as f64 - n_i as f64 * probs[c];
        }
        grad += jac.transpose() * s;

        // Fisher information: n_i J' (diag(p) - p p') J over c < k.
        let mut v = DMatrix::<f64>::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                v[(a, b)] = if a == b {
                    probs[a] * (1.0 - probs[a])
                } else {
                    -probs[a] * probs[b]
                };
            }
        }
        info += n_i as f64 * jac.transpose() * v * &jac;
    }
    (grad, info)
}

/// Error metrics of an estimated table against a reference table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    /// `estimate - truth` per cell.
    pub signed_errors: Vec<Vec<f64>>,
    pub max_abs_error: f64,
    /// Mean absolute error with every row weighted equally.
    pub mean_abs_error: f64,
}

/// Scores `est` against `truth`.
pub fn score(est: &ProportionTable, truth: &ProportionTable) -> Result<ScoreReport> {
    if est.n_rows() != truth.n_rows() || est.n_cols() != truth.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {}x{} but truth is {}x{}",
            est.n_rows(),
            est.n_cols(),
            truth.n_rows(),
            truth.n_cols()
        )));
    }
    let signed_errors: Vec<Vec<f64>> = (0..est.n_rows())
        .map(|i| {
            (0..est.n_cols())
                .map(|j| est.get(i, j) - truth.get(i, j))
                .collect()
        })
        .collect();
    let max_abs_error = signed_errors
        .iter()
        .flatten()
        .fold(0.0f64, |m, e| m.max(e.abs()));
    let mean_abs_error = signed_errors
        .iter()
        .map(|row| row.iter().map(|e| e.abs()).sum::<f64>() / row.len() as f64)
        .sum::<f64>()
        / signed_errors.len() as f64;
    Ok(ScoreReport {
        signed_errors,
        max_abs_error,
        mean_abs_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logit::{CovariateSource, DesignEntry};
    use crate::tables::aggregate_units;

    #[test]
    fn score_of_identical_tables_is_zero() {
        let t = ProportionTable::new(vec![vec![0.6, 0.4], vec![0.1, 0.9]]).unwrap();
        let s = score(&t, &t).unwrap();
        assert_eq!(s.max_abs_error, 0.0);
        assert_eq!(s.mean_abs_error, 0.0);
    }

    #[test]
    fn score_picks_up_single_cell_shift() {
        let truth = ProportionTable::new(vec![vec![0.6, 0.4], vec![0.1, 0.9]]).unwrap();
        let est = ProportionTable::new(vec![vec![0.7, 0.3], vec![0.1, 0.9]]).unwrap();
        let s = score(&est, &truth).unwrap();
        assert!((s.max_abs_error - 0.1).abs() < 1e-15);
        assert!((s.signed_errors[0][0] - 0.1).abs() < 1e-15);
        assert!((s.signed_errors[0][1] + 0.1).abs() < 1e-15);
        assert!((s.mean_abs_error - 0.05).abs() < 1e-15);
    }

    #[test]
    fn score_rejects_dimension_mismatch() {
        let a = ProportionTable::uniform(2, 2);
        let b = ProportionTable::uniform(2, 3);
        assert!(matches!(score(&a, &b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn reconstruct_with_no_slopes_returns_the_constant_table() {
        let table = ProportionTable::new(vec![vec![0.55, 0.45], vec![0.25, 0.75]]).unwrap();
        let model = LogitModel::constant(&table);
        let data = vec![
            UnitMargins::new("a", vec![100, 50], vec![70, 80]).unwrap(),
            UnitMargins::new("b", vec![30, 90], vec![60, 60]).unwrap(),
        ];
        let compiled = CompiledDesign::new(CovariateDesign::empty(), &data).unwrap();
        let rec = reconstruct_overall(&model, &compiled, &data).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((rec.get(i, j) - table.get(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reconstruct_matches_brute_force_weighted_average() {
        let data = vec![
            UnitMargins::new("a", vec![120, 60], vec![110, 70]).unwrap(),
            UnitMargins::new("b", vec![40, 140], vec![90, 90]).unwrap(),
            UnitMargins::new("c", vec![90, 90], vec![100, 80]).unwrap(),
        ];
        let design =
            CovariateDesign::new(vec![DesignEntry::new(0, 0, CovariateSource::RowMargin(1))]);
        let compiled = CompiledDesign::new(design, &data).unwrap();
        let model = LogitModel {
            alpha: vec![vec![0.4], vec![-0.9]],
            beta: vec![1.7],
            phi: None,
        };
        let rec = reconstruct_overall(&model, &compiled, &data).unwrap();
        // Brute force: independent summation through the public per-unit API.
        for i in 0..2 {
            let mut num = vec![0.0; 2];
            let mut den = 0.0;
            for u in &data {
                let t = crate::logit::transition_probs(&model, &compiled, u).unwrap();
                let w = u.row_totals()[i] as f64;
                den += w;
                for j in 0..2 {
                    num[j] += w * t.get(i, j);
                }
            }
            for j in 0..2 {
                assert!((rec.get(i, j) - num[j] / den).abs() < 1e-12);
            }
        }
    }

    fn noiseless_units() -> Vec<UnitCounts> {
        let spec = crate::genesis::GeneratorSpec {
            n_units: 8,
            seed: 0,
            size_law: crate::genesis::SizeLaw::Uniform {
                min: 1000,
                max: 1000,
            },
            margin_law: crate::genesis::MarginLaw::Grid {
                values: vec![
                    vec![0.2, 0.8],
                    vec![0.4, 0.6],
                    vec![0.6, 0.4],
                    vec![0.8, 0.2],
                ],
            },
            base_table: ProportionTable::new(vec![vec![0.8, 0.2], vec![0.4, 0.6]]).unwrap(),
            covariate_effects: vec![],
            dispersion: None,
            mixture: None,
            cluster_law: None,
        };
        crate::genesis::generate(&spec).unwrap().units
    }

    #[test]
    fn individual_fit_recovers_constant_table_exactly() {
        let units = noiseless_units();
        let fit = fit_individual_logistic(&units, &CovariateDesign::empty(), &Default::default())
            .unwrap();
        assert!(fit.separation_warnings.is_empty());
        let margins: Vec<UnitMargins> = units.iter().map(margins_of).collect();
        let compiled = CompiledDesign::new(CovariateDesign::empty(), &margins).unwrap();
        let rec = reconstruct_overall(&fit.model, &compiled, &margins).unwrap();
        let truth = aggregate_units(&units).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (rec.get(i, j) - truth.get(i, j)).abs() < 1e-9,
                    "cell ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn intercept_score_equation_forces_exact_reconstruction() {
        // Even on noisy, covariate-driven data the reconstructed overall
        // equals the raw aggregate: the intercept scores sum the same
        // counts.
        let spec = crate::genesis::presets::diagonal_covariate(300, 3);
        let units = crate::genesis::generate(&spec).unwrap().units;
        let design = crate::genesis::presets::matching_design("diagonal-covariate").unwrap();
        let fit = fit_individual_logistic(&units, &design, &Default::default()).unwrap();
        let margins: Vec<UnitMargins> = units.iter().map(margins_of).collect();
        let compiled = CompiledDesign::new(design, &margins).unwrap();
        let rec = reconstruct_overall(&fit.model, &compiled, &margins).unwrap();
        let truth = aggregate_units(&units).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (rec.get(i, j) - truth.get(i, j)).abs() < 5e-4,
                    "cell ({i},{j}): {} vs {}",
                    rec.get(i, j),
                    truth.get(i, j)
                );
            }
        }
    }

    #[test]
    fn fixed_slopes_recover_true_intercepts_at_scale() {
        // Generate with a known effect, freeze the slope at truth, and let
        // only the intercepts move: they converge on the base-table logits.
        let base = ProportionTable::new(vec![vec![0.7, 0.3], vec![0.35, 0.65]]).unwrap();
        let spec = crate::genesis::GeneratorSpec {
            n_units: 5000,
            seed: 9,
            size_law: crate::genesis::SizeLaw::Uniform {
                min: 500,
                max: 1500,
            },
            margin_law: crate::genesis::MarginLaw::Dirichlet {
                alpha: vec![5.0, 5.0],
            },
            base_table: base.clone(),
            covariate_effects: vec![crate::genesis::CovariateEffect {
                cell: [0, 0],
                source: CovariateSource::RowMargin(1),
                slope: 2.0,
            }],
            dispersion: Some(1e9),
            mixture: None,
            cluster_law: None,
        };
        let units = crate::genesis::generate(&spec).unwrap().units;
        let design =
            CovariateDesign::new(vec![DesignEntry::new(0, 0, CovariateSource::RowMargin(1))]);
        let fit = fit_individual_logistic(
            &units,
            &design,
            &IndividualFitOptions {
                fixed_beta: Some(vec![2.0]),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(fit.model.beta, vec![2.0]);
        let expect_alpha0 = (0.7f64 / 0.3).ln();
        let expect_alpha1 = (0.35f64 / 0.65).ln();
        assert!(
            (fit.model.alpha[0][0] - expect_alpha0).abs() < 0.05,
            "alpha00 {}",
            fit.model.alpha[0][0]
        );
        assert!(
            (fit.model.alpha[1][0] - expect_alpha1).abs() < 0.05,
            "alpha10 {}",
            fit.model.alpha[1][0]
        );
    }

    #[test]
    fn separation_is_capped_and_flagged() {
        // Row 0 votes column 0 without exception: its intercept diverges
        // and must be held at the cap, with a warning.
        let units: Vec<UnitCounts> = (0..6)
            .map(|k| {
                UnitCounts::new(
                    format!("u{k}"),
                    vec![vec![50 + k as u64, 0], vec![20, 30 + k as u64]],
                )
                .unwrap()
            })
            .collect();
        let fit = fit_individual_logistic(
            &units,
            &CovariateDesign::empty(),
            &IndividualFitOptions {
                coef_cap: 8.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!fit.separation_warnings.is_empty());
        assert!((fit.model.alpha[0][0] - 8.0).abs() < 1e-12);
        // Row 1 is unaffected by the divergence next door: its fitted
        // probability is the pooled proportion 120 / 315.
        let p = 1.0 / (1.0 + (-fit.model.alpha[1][0]).exp());
        assert!((p - 120.0 / 315.0).abs() < 1e-6);
    }
}
