//! Synthetic electoral-data generator with known ground truth.
//!
//! Each polling station draws a size and a margin composition, shifts the
//! base transition table on the log-odds scale according to the configured
//! covariate effects, perturbs the resulting rows with a Dirichlet layer,
//! and finally realizes integer counts multinomially. A latent two-type
//! mixture mechanism is available as an alternative: every row splits into
//! two voter types with unit-specific weights correlated with the margins,
//! and each type votes according to its own table.
//!
//! Generation is a pure function of the spec: every unit consumes its own
//! counter-mode RNG stream derived from the seed, so output is reproducible
//! and independent of evaluation order.

pub mod presets;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logit::CovariateSource;
use crate::tables::{ProportionTable, UnitCounts};

/// Distribution of station sizes `n_u++`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum SizeLaw {
    /// Uniform on `min..=max`. Set `min == max` for constant sizes.
    Uniform { min: u64, max: u64 },
}

impl SizeLaw {
    fn validate(&self) -> Result<()> {
        let SizeLaw::Uniform { min, max } = self;
        if *min == 0 || min > max {
            return Err(Error::Spec(format!(
                "size law needs 1 <= min <= max, got [{min}, {max}]"
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        let SizeLaw::Uniform { min, max } = self;
        rng.random_range(*min..=*max)
    }
}

/// Distribution of the margin composition `x_u` over the row simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum MarginLaw {
    /// Independent Dirichlet draw per station.
    Dirichlet { alpha: Vec<f64> },
    /// Deterministic cycle through a fixed list of compositions.
    Grid { values: Vec<Vec<f64>> },
}

impl MarginLaw {
    fn validate(&self, n_rows: usize) -> Result<()> {
        match self {
            MarginLaw::Dirichlet { alpha } => {
                if alpha.len() != n_rows {
                    return Err(Error::Spec(format!(
                        "margin law has {} concentrations for {n_rows} rows",
                        alpha.len()
                    )));
                }
                if alpha.iter().any(|a| !(*a > 0.0)) {
                    return Err(Error::Spec("Dirichlet concentrations must be > 0".into()));
                }
            }
            MarginLaw::Grid { values } => {
                if values.is_empty() {
                    return Err(Error::Spec("empty margin grid".into()));
                }
                for v in values {
                    if v.len() != n_rows {
                        return Err(Error::Spec(format!(
                            "margin grid entry has {} shares for {n_rows} rows",
                            v.len()
                        )));
                    }
                    let sum: f64 = v.iter().sum();
                    if v.iter().any(|s| !(*s >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::Spec(
                            "margin grid entries must lie on the simplex".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn sample(&self, unit_index: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            MarginLaw::Dirichlet { alpha } => sample_dirichlet(alpha, rng),
            MarginLaw::Grid { values } => values[unit_index % values.len()].clone(),
        }
    }

    /// Analytic mean of the composition, used to center covariate effects.
    pub fn mean(&self) -> Vec<f64> {
        match self {
            MarginLaw::Dirichlet { alpha } => {
                let total: f64 = alpha.iter().sum();
                alpha.iter().map(|a| a / total).collect()
            }
            MarginLaw::Grid { values } => {
                let n = values.len() as f64;
                let dim = values[0].len();
                (0..dim)
                    .map(|i| values.iter().map(|v| v[i]).sum::<f64>() / n)
                    .collect()
            }
        }
    }
}

/// One log-odds covariate effect: cell `(i, j)`'s odds against the rest of
/// its row scale with `exp(slope * (z - mean(z)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateEffect {
    pub cell: [usize; 2],
    pub source: CovariateSource,
    pub slope: f64,
}

/// Unit-level weight of the latent type as a function of the margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum WeightLaw {
    /// `expit(intercept + slope * x_on_row)`, which ties the latent type
    /// share to the margin composition.
    Logistic {
        on_row: usize,
        intercept: f64,
        slope: f64,
    },
}

impl WeightLaw {
    pub fn weight(&self, x: &[f64]) -> f64 {
        let WeightLaw::Logistic {
            on_row,
            intercept,
            slope,
        } = self;
        expit(intercept + slope * x[*on_row])
    }
}

/// Latent two-type mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// Transition tables for type `V = 0` and `V = 1`.
    pub tables: [ProportionTable; 2],
    pub weight_law: WeightLaw,
    /// Split each row with an independent binomial draw; otherwise use the
    /// deterministic largest-remainder split at the unit weight.
    #[serde(default = "default_true")]
    pub per_row: bool,
}

fn default_true() -> bool {
    true
}

/// Second-stage clustering: voters of a row arrive in groups of geometric
/// size sharing one probability draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLaw {
    pub mean_size: f64,
}

/// Full description of a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_units: usize,
    pub seed: u64,
    pub size_law: SizeLaw,
    pub margin_law: MarginLaw,
    /// Transition probabilities in force when every covariate sits at its
    /// mean.
    pub base_table: ProportionTable,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub covariate_effects: Vec<CovariateEffect>,
    /// Dirichlet precision of the unit-level row perturbation. `None`
    /// disables all sampling noise: rows and counts are realized at their
    /// expectations (largest-remainder rounding).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_law: Option<ClusterLaw>,
}

/// Ground-truth tallies of the latent type split, kept for oracle analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTallies {
    pub unit_id: String,
    /// Count tables by latent level (`[V=0, V=1]`).
    pub by_level: [Vec<Vec<u64>>; 2],
}

/// Generator output: the individual-data tables, plus per-type tallies when
/// a mixture was configured.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub units: Vec<UnitCounts>,
    pub latent: Option<Vec<LatentTallies>>,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::Spec("n_units must be at least 1".into()));
        }
        self.size_law.validate()?;
        let n_rows = self.base_table.n_rows();
        let n_cols = self.base_table.n_cols();
        if n_rows < 2 || n_cols < 2 {
            return Err(Error::Spec("base table must be at least 2x2".into()));
        }
        self.margin_law.validate(n_rows)?;
        if let Some(s) = self.dispersion {
            if !(s > 0.0) {
                return Err(Error::Spec(format!("dispersion must be > 0, got {s}")));
            }
        }
        for (k, e) in self.covariate_effects.iter().enumerate() {
            let [i, j] = e.cell;
            if i >= n_rows || j >= n_cols {
                return Err(Error::Spec(format!(
                    "covariate effect {k}: cell ({i},{j}) outside {n_rows}x{n_cols} table"
                )));
            }
            match &e.source {
                CovariateSource::RowMargin(r) => {
                    if *r >= n_rows {
                        return Err(Error::Spec(format!(
                            "covariate effect {k}: row margin {r} outside {n_rows} rows"
                        )));
                    }
                }
                CovariateSource::External(name) => {
                    return Err(Error::Spec(format!(
                        "covariate effect {k}: external covariate '{name}' cannot drive \
                         generation; only row margins exist before data is drawn"
                    )));
                }
            }
            if !e.slope.is_finite() {
                return Err(Error::Spec(format!(
                    "covariate effect {k}: non-finite slope"
                )));
            }
            for other in &self.covariate_effects[..k] {
                if other.cell == e.cell && other.source == e.source {
                    return Err(Error::Spec(format!(
                        "duplicate covariate effect on cell ({i},{j})"
                    )));
                }
            }
        }
        if let Some(mix) = &self.mixture {
            if !self.covariate_effects.is_empty() {
                return Err(Error::Spec(
                    "covariate effects and a mixture cannot be combined; the mixture \
                     tables already define the unit-level variation"
                        .into(),
                ));
            }
            for t in &mix.tables {
                if t.n_rows() != n_rows || t.n_cols() != n_cols {
                    return Err(Error::Spec(format!(
                        "mixture table is {}x{}, base table is {n_rows}x{n_cols}",
                        t.n_rows(),
                        t.n_cols()
                    )));
                }
            }
            let WeightLaw::Logistic { on_row, .. } = &mix.weight_law;
            if *on_row >= n_rows {
                return Err(Error::Spec(format!(
                    "mixture weight law reads row margin {on_row}, table has {n_rows} rows"
                )));
            }
        }
        if let Some(c) = &self.cluster_law {
            if !(c.mean_size >= 1.0) {
                return Err(Error::Spec(format!(
                    "cluster mean size must be >= 1, got {}",
                    c.mean_size
                )));
            }
        }
        Ok(())
    }

    fn n_rows(&self) -> usize {
        self.base_table.n_rows()
    }
}

fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One Dirichlet draw around `mean` with concentration `precision * mean`.
/// Infinite precision returns the mean itself; zero-mean coordinates stay
/// structurally zero.
pub fn dirichlet_row(mean: &[f64], precision: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if precision.is_nan() || precision <= 0.0 {
        return Err(Error::InvalidPrecision(precision));
    }
    if mean.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::Validation(
            "Dirichlet mean must be non-negative and finite".into(),
        ));
    }
    if precision.is_infinite() {
        return Ok(mean.to_vec());
    }
    let mut out = Vec::with_capacity(mean.len());
    let mut sum = 0.0;
    for &m in mean {
        let alpha = precision * m;
        let v = if alpha > 0.0 {
            Gamma::new(alpha, 1.0)
                .map_err(|e| Error::Numeric(format!("gamma({alpha}): {e}")))?
                .sample(rng)
        } else {
            0.0
        };
        sum += v;
        out.push(v);
    }
    if sum <= 1e-300 {
        // All gamma draws collapsed to zero; fall back to the mean.
        return Ok(mean.to_vec());
    }
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

fn sample_dirichlet(alpha: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut out = Vec::with_capacity(alpha.len());
        let mut sum = 0.0;
        for &a in alpha {
            let v = Gamma::new(a, 1.0).expect("validated alpha").sample(rng);
            sum += v;
            out.push(v);
        }
        if sum > 1e-300 {
            for v in &mut out {
                *v /= sum;
            }
            return out;
        }
    }
}

/// Rounds `total * shares` to integers summing exactly to `total`, giving
/// leftover units to the largest fractional remainders (ties to the lowest
/// index).
pub(crate) fn largest_remainder(total: u64, shares: &[f64]) -> Vec<u64> {
    let sum: f64 = shares.iter().sum();
    if !(sum > 0.0) {
        let mut out = vec![0u64; shares.len()];
        if let Some(first) = out.first_mut() {
            *first = total;
        }
        return out;
    }
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut out: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for k in 0..(total - assigned) as usize {
        out[order[k % shares.len()]] += 1;
    }
    out
}

/// Multinomial sample by sequential conditional binomials.
fn multinomial(n: u64, p: &[f64], rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut out = vec![0u64; p.len()];
    let mut remaining = n;
    let mut mass_left: f64 = p.iter().sum();
    for (j, &pj) in p.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if j == p.len() - 1 || mass_left <= pj {
            out[j] = remaining;
            remaining = 0;
            break;
        }
        let prob = (pj / mass_left).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, prob)
            .expect("probability in range")
            .sample(rng);
        out[j] = draw;
        remaining -= draw;
        mass_left -= pj;
    }
    // Numerical leftovers (mass_left underflow) land on the last positive cell.
    if remaining > 0 {
        let idx = p
            .iter()
            .enumerate()
            .rev()
            .find(|(_, &v)| v > 0.0)
            .map(|(i, _)| i)
            .unwrap_or(p.len() - 1);
        out[idx] += remaining;
    }
    out
}

/// Expected transition row for row `i` at margin composition `x`: the base
/// row with every configured effect applied on the log-odds scale, centered
/// at the margin-law mean.
fn expected_row(spec: &GeneratorSpec, i: usize, x: &[f64], centers: &[f64]) -> Vec<f64> {
    let base = spec.base_table.row(i);
    let mut touched = false;
    let mut etas: Vec<f64> = base
        .iter()
        .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
        .collect();
    for effect in &spec.covariate_effects {
        if effect.cell[0] != i {
            continue;
        }
        let CovariateSource::RowMargin(r) = &effect.source else {
            continue;
        };
        etas[effect.cell[1]] += effect.slope * (x[*r] - centers[*r]);
        touched = true;
    }
    if !touched {
        // No effect on this row: return the base row bit-exactly.
        return base.to_vec();
    }
    let max = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = etas.iter().map(|&e| (e - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// Realizes one row of counts around its expected probabilities, honoring
/// the dispersion and clustering settings.
fn draw_row_counts(
    spec: &GeneratorSpec,
    n: u64,
    mean_row: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u64>> {
    if n == 0 {
        return Ok(vec![0; mean_row.len()]);
    }
    let Some(s) = spec.dispersion else {
        // No-noise mode: expected counts, rounded consistently.
        return Ok(largest_remainder(n, mean_row));
    };
    match &spec.cluster_law {
        None => {
            let p = dirichlet_row(mean_row, s, rng)?;
            Ok(multinomial(n, &p, rng))
        }
        Some(cluster) => {
            // Voters arrive in geometric-size groups sharing one draw.
            let q = (1.0 / cluster.mean_size).clamp(1e-12, 1.0);
            let mut counts = vec![0u64; mean_row.len()];
            let mut remaining = n;
            while remaining > 0 {
                let size = sample_geometric(q, rng).min(remaining);
                let p = dirichlet_row(mean_row, s, rng)?;
                for (c, d) in counts.iter_mut().zip(multinomial(size, &p, rng)) {
                    *c += d;
                }
                remaining -= size;
            }
            Ok(counts)
        }
    }
}

/// Geometric on {1, 2, ...} with success probability `q` via inversion.
fn sample_geometric(q: f64, rng: &mut ChaCha8Rng) -> u64 {
    if q >= 1.0 {
        return 1;
    }
    let u: f64 = rng.random::<f64>();
    let k = (1.0 - u).ln() / (1.0 - q).ln();
    k.floor() as u64 + 1
}

fn unit_rng(seed: u64, unit_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit_index + 1);
    rng
}

fn unit_name(index: usize) -> String {
    format!("u{index:06}")
}

/// Generates a full dataset from the spec. Dispatches to the mixture
/// mechanism when one is configured.
pub fn generate(spec: &GeneratorSpec) -> Result<GeneratedData> {
    spec.validate()?;
    if spec.mixture.is_some() {
        return generate_mixture(spec);
    }
    let centers = spec.margin_law.mean();
    let n_rows = spec.n_rows();
    let mut units = Vec::with_capacity(spec.n_units);
    for u in 0..spec.n_units {
        let mut rng = unit_rng(spec.seed, u as u64);
        let n = spec.size_law.sample(&mut rng);
        let x = spec.margin_law.sample(u, &mut rng);
        let row_totals = largest_remainder(n, &x);
        let mut counts = Vec::with_capacity(n_rows);
        for i in 0..n_rows {
            let mean_row = expected_row(spec, i, &x, &centers);
            counts.push(draw_row_counts(spec, row_totals[i], &mean_row, &mut rng)?);
        }
        units.push(UnitCounts::new(unit_name(u), counts)?);
    }
    Ok(GeneratedData {
        units,
        latent: None,
    })
}

/// Generates under the latent two-type mechanism. Requires `spec.mixture`.
pub fn generate_mixture(spec: &GeneratorSpec) -> Result<GeneratedData> {
    spec.validate()?;
    let Some(mix) = &spec.mixture else {
        return Err(Error::Spec("generate_mixture needs a mixture".into()));
    };
    let n_rows = spec.n_rows();
    let n_cols = spec.base_table.n_cols();
    let mut units = Vec::with_capacity(spec.n_units);
    let mut latents = Vec::with_capacity(spec.n_units);
    for u in 0..spec.n_units {
        let mut rng = unit_rng(spec.seed, u as u64);
        let n = spec.size_law.sample(&mut rng);
        let x = spec.margin_law.sample(u, &mut rng);
        let row_totals = largest_remainder(n, &x);
        let w = mix.weight_law.weight(&x);

        let mut combined = vec![vec![0u64; n_cols]; n_rows];
        let mut by_level = [
            vec![vec![0u64; n_cols]; n_rows],
            vec![vec![0u64; n_cols]; n_rows],
        ];
        for i in 0..n_rows {
            let n_i = row_totals[i];
            let n_v1 = if n_i == 0 {
                0
            } else if mix.per_row {
                Binomial::new(n_i, w.clamp(0.0, 1.0))
                    .expect("weight in [0,1]")
                    .sample(&mut rng)
            } else {
                largest_remainder(n_i, &[1.0 - w, w])[1]
            };
            let per_level = [n_i - n_v1, n_v1];
            for (level, &n_iv) in per_level.iter().enumerate() {
                let row = draw_row_counts(spec, n_iv, mix.tables[level].row(i), &mut rng)?;
                for j in 0..n_cols {
                    by_level[level][i][j] = row[j];
                    combined[i][j] += row[j];
                }
            }
        }
        units.push(UnitCounts::new(unit_name(u), combined)?);
        latents.push(LatentTallies {
            unit_id: unit_name(u),
            by_level,
        });
    }
    Ok(GeneratedData {
        units,
        latent: Some(latents),
    })
}
