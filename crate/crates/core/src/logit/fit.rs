//! Least-squares fitting of the transition model on aggregated data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::goodman;
use crate::logit::{softmax_with_reference, CompiledDesign, CovariateDesign, LogitModel};
use crate::optim::{self, BfgsOptions};
use crate::tables::{common_margin_dims, UnitMargins};

#[derive(Debug, Clone)]
pub struct OptimizerOptions {
    /// Sup-norm tolerance on the gradient of the normalized objective.
    pub tol: f64,
    pub max_iter: usize,
    /// Total number of starts; the first is the Goodman warm start, the
    /// rest add seeded jitter.
    pub restarts: usize,
    pub seed: u64,
    /// Weigh each station by its total count.
    pub size_weights: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 400,
            restarts: 5,
            seed: 0,
            size_weights: true,
        }
    }
}

/// Options for the working-covariance (WLS) fit.
#[derive(Debug, Clone)]
pub struct WlsOptions {
    pub optimizer: OptimizerOptions,
    /// Maximum reweighting rounds.
    pub max_outer: usize,
    /// Sup-norm tolerance on the parameter change between rounds.
    pub outer_tol: f64,
    /// Pin the overdispersion factor instead of estimating it.
    pub fixed_phi: Option<f64>,
    /// Use the plain OLS weighting instead of the working covariance;
    /// with `fixed_phi = 0` this reproduces the OLS objective exactly.
    pub identity_weights: bool,
}

impl Default for WlsOptions {
    fn default() -> Self {
        Self {
            optimizer: OptimizerOptions::default(),
            max_outer: 25,
            outer_tol: 1e-8,
            fixed_phi: None,
            identity_weights: false,
        }
    }
}

/// Result of an ecological logit fit.
#[derive(Debug, Clone)]
pub struct LogitFit {
    pub model: LogitModel,
    pub design: CompiledDesign,
    /// Final value of the normalized objective.
    pub objective: f64,
    /// Sup-norm of the gradient at the solution.
    pub grad_norm: f64,
    /// Optimizer iterations summed over restarts and reweighting rounds.
    pub iterations: usize,
    pub converged: bool,
    /// How many working covariances needed a ridge fallback (WLS only).
    pub ridge_fallbacks: usize,
}

/// The weighted squared-residual objective over the first `C - 1` column
/// shares,
/// `L(theta) = sum_u r_u' W_u r_u / norm` with `r_u = y_u - yhat_u(theta)`,
/// exposed with its analytic gradient.
#[derive(Debug, Clone)]
pub struct EcologicalObjective {
    n_rows: usize,
    n_cols: usize,
    design: CompiledDesign,
    /// Row shares per unit.
    x: Vec<Vec<f64>>,
    /// First C-1 column shares per unit.
    y: Vec<Vec<f64>>,
    /// Covariate values per unit.
    z: Vec<Vec<f64>>,
    /// Per-unit weight matrix, row-major (C-1) x (C-1).
    weights: Vec<Vec<f64>>,
    norm: f64,
}

impl EcologicalObjective {
    /// The OLS objective: the full-table squared residual
    /// `sum_j (y_j - yhat_j)^2` expressed on the first C-1 coordinates via
    /// the weight `w_u (I + 1 1')`, since residuals sum to zero.
    pub fn ols(data: &[UnitMargins], design: &CompiledDesign, size_weights: bool) -> Result<Self> {
        let weights: Vec<Vec<f64>> = data
            .iter()
            .map(|u| {
                let w = if size_weights { u.total() as f64 } else { 1.0 };
                ols_weight(design.n_cols() - 1, w)
            })
            .collect();
        Self::with_weights(data, design, weights)
    }

    /// A generic weighted objective; `weights` holds one row-major
    /// `(C-1) x (C-1)` matrix per unit.
    pub fn with_weights(
        data: &[UnitMargins],
        design: &CompiledDesign,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let (n_rows, n_cols) = common_margin_dims(data)?;
        if n_rows != design.n_rows() || n_cols != design.n_cols() {
            return Err(Error::DimensionMismatch(format!(
                "data is {}x{} but design expects {}x{}",
                n_rows,
                n_cols,
                design.n_rows(),
                design.n_cols()
            )));
        }
        if weights.len() != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight matrices for {} units",
                weights.len(),
                data.len()
            )));
        }
        let x: Vec<Vec<f64>> = data.iter().map(|u| u.row_shares()).collect();
        let y: Vec<Vec<f64>> = data
            .iter()
            .map(|u| (0..n_cols - 1).map(|j| u.col_share(j)).collect())
            .collect();
        let z = data
            .iter()
            .map(|u| design.covariates_for(u))
            .collect::<Result<Vec<_>>>()?;
        let norm: f64 = data.iter().map(|u| u.total() as f64).sum();
        Ok(Self {
            n_rows,
            n_cols,
            design: design.clone(),
            x,
            y,
            z,
            weights,
            norm,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_rows * (self.n_cols - 1) + self.design.n_entries()
    }

    pub fn n_units(&self) -> usize {
        self.x.len()
    }

    pub fn pack(&self, model: &LogitModel) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.n_params());
        for row in &model.alpha {
            theta.extend_from_slice(row);
        }
        theta.extend_from_slice(&model.beta);
        theta
    }

    pub fn unpack(&self, theta: &[f64]) -> LogitModel {
        let k = self.n_cols - 1;
        let alpha = (0..self.n_rows)
            .map(|i| theta[i * k..(i + 1) * k].to_vec())
            .collect();
        LogitModel {
            alpha,
            beta: theta[self.n_rows * k..].to_vec(),
            phi: None,
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.value_and_grad(theta).0
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.value_and_grad(theta).1
    }

    /// Objective value and analytic gradient at `theta`.
    pub fn value_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let k = self.n_cols - 1;
        let n_params = self.n_params();
        let mut value = 0.0;
        let mut grad = vec![0.0; n_params];
        let targets = self.design.targets();

        let mut etas = vec![0.0; k];
        let mut probs: Vec<Vec<f64>> = vec![vec![0.0; self.n_cols]; self.n_rows];
        let mut yhat = vec![0.0; k];
        let mut r = vec![0.0; k];
        let mut q = vec![0.0; k];
        let mut deta = vec![vec![0.0; k]; self.n_rows];

        for u in 0..self.x.len() {
            let x = &self.x[u];
            let z = &self.z[u];
            let w = &self.weights[u];

            for (i, p_row) in probs.iter_mut().enumerate() {
                etas.copy_from_slice(&theta[i * k..(i + 1) * k]);
                for (m, t) in targets.iter().enumerate() {
                    if t.row == i {
                        let beta = theta[self.n_rows * k + m];
                        for &(col, sign) in &t.cols {
                            etas[col] += sign * beta * z[m];
                        }
                    }
                }
                *p_row = softmax_with_reference(&etas);
            }

            for j in 0..k {
                yhat[j] = (0..self.n_rows).map(|i| x[i] * probs[i][j]).sum();
                r[j] = self.y[u][j] - yhat[j];
            }

            // q = -2 W r; value contribution r' W r.
            for j in 0..k {
                let mut wr = 0.0;
                for l in 0..k {
                    wr += w[j * k + l] * r[l];
                }
                q[j] = -2.0 * wr;
                value += r[j] * wr;
            }

            // dL/d_eta_ik = x_i p_ik (q_k - sum_j q_j p_ij)
            for i in 0..self.n_rows {
                let t_i: f64 = (0..k).map(|j| q[j] * probs[i][j]).sum();
                for (c, d) in deta[i].iter_mut().enumerate() {
                    *d = x[i] * probs[i][c] * (q[c] - t_i);
                    grad[i * k + c] += *d;
                }
            }
            for (m, t) in targets.iter().enumerate() {
                let mut g = 0.0;
                for &(col, sign) in &t.cols {
                    g += sign * z[m] * deta[t.row][col];
                }
                grad[self.n_rows * k + m] += g;
            }
        }

        value /= self.norm;
        for g in &mut grad {
            *g /= self.norm;
        }
        (value, grad)
    }
}

fn ols_weight(k: usize, w: f64) -> Vec<f64> {
    let mut m = vec![w; k * k];
    for j in 0..k {
        m[j * k + j] = 2.0 * w;
    }
    m
}

/// Starting points: the Goodman estimate on the logit scale and the
/// uniform table, then seeded jitter alternating around the two anchors.
/// Slope coordinates get wider jitter; they live on the log-odds-per-share
/// scale where effects of magnitude several are common.
fn starting_points(
    data: &[UnitMargins],
    design: &CompiledDesign,
    obj: &EcologicalObjective,
    opts: &OptimizerOptions,
) -> Vec<Vec<f64>> {
    let n_alpha = design.n_rows() * (design.n_cols() - 1);
    let warm = match goodman::fit_goodman(data, opts.size_weights) {
        Ok(est) => LogitModel {
            beta: vec![0.0; design.n_entries()],
            ..LogitModel::constant(&est.table)
        },
        Err(_) => LogitModel::zeros(design.n_rows(), design.n_cols(), design.n_entries()),
    };
    let anchors = [obj.pack(&warm), vec![0.0; obj.n_params()]];
    let mut starts = vec![];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let alpha_jitter = Normal::new(0.0, 0.3).expect("valid normal");
    let beta_jitter = Normal::new(0.0, 1.0).expect("valid normal");
    for r in 0..opts.restarts.max(1) {
        let anchor = &anchors[r % 2];
        if r < 2 {
            starts.push(anchor.clone());
            continue;
        }
        let jittered = anchor
            .iter()
            .enumerate()
            .map(|(idx, t)| {
                let noise = if idx < n_alpha {
                    alpha_jitter.sample(&mut rng)
                } else {
                    beta_jitter.sample(&mut rng)
                };
                t + noise
            })
            .collect();
        starts.push(jittered);
    }
    starts
}

struct BestFit {
    outcome: optim::BfgsOutcome,
    iterations_total: usize,
}

fn minimize_over_starts(
    obj: &EcologicalObjective,
    starts: &[Vec<f64>],
    opts: &OptimizerOptions,
) -> BestFit {
    let bfgs = BfgsOptions {
        tol: opts.tol,
        max_iter: opts.max_iter,
    };
    let mut best: Option<optim::BfgsOutcome> = None;
    let mut iterations_total = 0;
    for x0 in starts {
        let out = optim::minimize(|t| obj.value_and_grad(t), x0, &bfgs);
        iterations_total += out.iterations;
        let better = match &best {
            None => true,
            Some(b) => out.value < b.value,
        };
        if better {
            best = Some(out);
        }
    }
    BestFit {
        outcome: best.expect("at least one start"),
        iterations_total,
    }
}

fn check_unit_count(n_units: usize, n_params: usize) -> Result<()> {
    if n_units < n_params {
        return Err(Error::TooFewUnits {
            need: n_params,
            got: n_units,
        });
    }
    Ok(())
}

/// Fits the transition model by minimizing the size-weighted squared
/// distance between observed and predicted column shares.
pub fn fit_logit_ols(
    data: &[UnitMargins],
    design: &CovariateDesign,
    opts: &OptimizerOptions,
) -> Result<LogitFit> {
    let compiled = CompiledDesign::new(design.clone(), data)?;
    let obj = EcologicalObjective::ols(data, &compiled, opts.size_weights)?;
    check_unit_count(data.len(), obj.n_params())?;
    let starts = starting_points(data, &compiled, &obj, opts);
    let best = minimize_over_starts(&obj, &starts, opts);
    let fit = LogitFit {
        model: obj.unpack(&best.outcome.x),
        design: compiled,
        objective: best.outcome.value,
        grad_norm: best.outcome.grad_norm,
        iterations: best.iterations_total,
        converged: best.outcome.converged,
        ridge_fallbacks: 0,
    };
    if !fit.converged {
        return Err(Error::NonConvergence {
            grad_norm: fit.grad_norm,
            iterations: fit.iterations,
            tol: opts.tol,
            best: Box::new(fit),
        });
    }
    Ok(fit)
}

/// Inverts the `(C-1) x (C-1)` multinomial covariance `diag(p) - p p'`,
/// adding an escalating ridge when it is numerically singular. Returns the
/// inverse and whether a ridge was needed.
fn invert_working_covariance(p: &[f64]) -> Option<(Vec<f64>, bool)> {
    use nalgebra::DMatrix;
    let k = p.len();
    let mut v = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        for l in 0..k {
            v[(j, l)] = if j == l {
                p[j] * (1.0 - p[j])
            } else {
                -p[j] * p[l]
            };
        }
    }
    let mut ridge = 0.0;
    let scale = (v.trace() / k as f64).max(1e-30);
    for attempt in 0..10 {
        let mut m = v.clone();
        for j in 0..k {
            m[(j, j)] += ridge;
        }
        if let Some(chol) = m.cholesky() {
            let inv = chol.inverse();
            let flat = (0..k)
                .flat_map(|r| (0..k).map(move |c| (r, c)))
                .map(|(r, c)| inv[(r, c)])
                .collect();
            return Some((flat, attempt > 0));
        }
        ridge = if ridge == 0.0 {
            1e-12 * scale
        } else {
            ridge * 100.0
        };
    }
    None
}

/// Fits the transition model by iteratively reweighted least squares with a
/// Dirichlet-multinomial working covariance
/// `(1 + phi) / n_u * (diag(yhat) - yhat yhat')`, alternating parameter
/// steps with moment re-estimation of `phi`.
pub fn fit_logit_wls(
    data: &[UnitMargins],
    design: &CovariateDesign,
    wls: &WlsOptions,
) -> Result<LogitFit> {
    let opts = &wls.optimizer;
    let compiled = CompiledDesign::new(design.clone(), data)?;
    let k = compiled.n_cols() - 1;

    // Pilot fit under the OLS weighting (keep the best point even if it is
    // not fully converged; the reweighted rounds continue from it).
    let pilot_obj = EcologicalObjective::ols(data, &compiled, opts.size_weights)?;
    check_unit_count(data.len(), pilot_obj.n_params())?;
    let starts = starting_points(data, &compiled, &pilot_obj, opts);
    let pilot = minimize_over_starts(&pilot_obj, &starts, opts);
    let mut theta = pilot.outcome.x.clone();
    let mut iterations = pilot.iterations_total;

    let mut phi = wls.fixed_phi.unwrap_or(0.0).max(0.0);
    let mut ridge_fallbacks = 0usize;
    let mut last_outcome = pilot.outcome;
    let mut outer_converged = false;

    for _round in 0..wls.max_outer {
        // Rebuild weights at the current parameters.
        let weights = if wls.identity_weights {
            data.iter()
                .map(|u| {
                    let w = if opts.size_weights {
                        u.total() as f64
                    } else {
                        1.0
                    };
                    ols_weight(k, w)
                })
                .collect::<Vec<_>>()
        } else {
            let model = pilot_obj.unpack(&theta);
            let mut all = Vec::with_capacity(data.len());
            for u in data {
                let shares = super::predicted_shares(&model, &compiled, u)?;
                let (inv, ridged) = invert_working_covariance(&shares[..k]).ok_or_else(|| {
                    Error::SingularWeight {
                        unit_id: u.unit_id().to_string(),
                    }
                })?;
                if ridged {
                    ridge_fallbacks += 1;
                }
                let scale = u.total() as f64 / (1.0 + phi);
                all.push(inv.into_iter().map(|v| v * scale).collect());
            }
            all
        };

        let obj = EcologicalObjective::with_weights(data, &compiled, weights)?;
        let out = optim::minimize(
            |t| obj.value_and_grad(t),
            &theta,
            &BfgsOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
            },
        );
        iterations += out.iterations;

        let delta = theta
            .iter()
            .zip(&out.x)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        theta = out.x.clone();

        // Moment update of phi from Pearson residuals at the new parameters.
        let mut phi_delta = 0.0;
        if wls.fixed_phi.is_none() {
            let model = obj.unpack(&theta);
            let mut pearson = 0.0;
            let mut usable = true;
            for u in data {
                let shares = super::predicted_shares(&model, &compiled, u)?;
                let Some((inv, _)) = invert_working_covariance(&shares[..k]) else {
                    usable = false;
                    break;
                };
                let r: Vec<f64> = (0..k).map(|j| u.col_share(j) - shares[j]).collect();
                let mut q = 0.0;
                for j in 0..k {
                    for l in 0..k {
                        q += r[j] * inv[j * k + l] * r[l];
                    }
                }
                pearson += u.total() as f64 * q;
            }
            let dof = data.len() as f64 * k as f64 - obj.n_params() as f64;
            if usable && dof > 0.0 {
                let new_phi = (pearson / dof - 1.0).max(0.0);
                phi_delta = (new_phi - phi).abs();
                phi = new_phi;
            }
        }

        last_outcome = out;
        if delta < wls.outer_tol && phi_delta < 1e-6 * (1.0 + phi) {
            outer_converged = true;
            break;
        }
    }

    let model = LogitModel {
        phi: Some(phi),
        ..pilot_obj.unpack(&last_outcome.x)
    };
    let fit = LogitFit {
        model,
        design: compiled,
        objective: last_outcome.value,
        grad_norm: last_outcome.grad_norm,
        iterations,
        converged: last_outcome.converged && outer_converged,
        ridge_fallbacks,
    };
    if !fit.converged {
        return Err(Error::NonConvergence {
            grad_norm: fit.grad_norm,
            iterations: fit.iterations,
            tol: opts.tol,
            best: Box::new(fit),
        });
    }
    Ok(fit)
}
