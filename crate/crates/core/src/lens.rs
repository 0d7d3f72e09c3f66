//! Diagnostics that need the true individual data ("oracle mode"): the
//! correlation screen for ecological bias, quantile-grouped profiles, and
//! the 2x2 line-geometry export.
//!
//! Ecological estimates go wrong exactly when within-unit proportions
//! correlate with the margin compositions; none of these checks can be run
//! from aggregated data alone.

use crate::error::{Error, Result};
use crate::tables::{aggregate_units, common_dims, margins_of, UnitCounts};

/// Size-weighted correlations between within-unit proportions and margin
/// shares, indexed by `(table row i, table column j, margin row i')`.
#[derive(Debug, Clone)]
pub struct BiasCorrelation {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl BiasCorrelation {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Correlation between `f_uij` and `x_ui'` across units.
    pub fn get(&self, row: usize, col: usize, margin_row: usize) -> f64 {
        self.values[(row * self.n_cols + col) * self.n_rows + margin_row]
    }

    /// Iterates `(row, col, margin_row, correlation)` in a fixed order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        let (r, c) = (self.n_rows, self.n_cols);
        (0..r).flat_map(move |i| {
            (0..c).flat_map(move |j| (0..r).map(move |i2| (i, j, i2, self.get(i, j, i2))))
        })
    }
}

/// Computes, for every `(i, j, i')`, the correlation between the
/// within-unit proportion `f_uij` and the margin share `x_ui'`, weighted by
/// the row sizes `n_ui+`. Units with an empty row `i` are skipped for that
/// row's entries. Values near zero everywhere are consistent with unbiased
/// ecological regression.
pub fn bias_correlation(units: &[UnitCounts]) -> Result<BiasCorrelation> {
    let (n_rows, n_cols) = common_dims(units)?;
    let mut values = Vec::with_capacity(n_rows * n_cols * n_rows);
    for i in 0..n_rows {
        // Collect (f_uij for all j, x margins, weight) over usable units.
        let mut rows: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(units.len());
        for u in units {
            if let Some(f) = u.row_proportions(i) {
                let m = margins_of(u);
                rows.push((f, m.row_shares(), u.row_total(i) as f64));
            }
        }
        if rows.len() < 2 {
            return Err(Error::InsufficientUnits {
                need: 2,
                got: rows.len(),
                groups: 0,
            });
        }
        for j in 0..n_cols {
            for i2 in 0..n_rows {
                values.push(weighted_correlation(
                    rows.iter().map(|(f, x, w)| (f[j], x[i2], *w)),
                    i2,
                )?);
            }
        }
    }
    Ok(BiasCorrelation {
        n_rows,
        n_cols,
        values,
    })
}

/// Weighted Pearson correlation. A constant first argument yields 0 (no
/// signal); a constant second argument is an error, since correlating with
/// a degenerate margin is meaningless.
fn weighted_correlation(
    pairs: impl Iterator<Item = (f64, f64, f64)> + Clone,
    margin_row: usize,
) -> Result<f64> {
    let mut sw = 0.0;
    let mut sf = 0.0;
    let mut sx = 0.0;
    for (f, x, w) in pairs.clone() {
        sw += w;
        sf += w * f;
        sx += w * x;
    }
    let (mf, mx) = (sf / sw, sx / sw);
    let mut vf = 0.0;
    let mut vx = 0.0;
    let mut cov = 0.0;
    for (f, x, w) in pairs {
        vf += w * (f - mf) * (f - mf);
        vx += w * (x - mx) * (x - mx);
        cov += w * (f - mf) * (x - mx);
    }
    if vx / sw <= 1e-14 {
        return Err(Error::InsufficientVariation { row: margin_row });
    }
    if vf / sw <= 1e-18 {
        return Ok(0.0);
    }
    Ok(cov / (vf.sqrt() * vx.sqrt()))
}

/// One quantile group of the profile: the average grouping share and the
/// pooled proportion of the tracked column for every row category.
#[derive(Debug, Clone)]
pub struct ProfilePoint {
    /// Size-weighted average of the grouping share within the group.
    pub x: f64,
    /// Pooled `f_ij` for the tracked column, one value per row category;
    /// `NaN` when a row category is empty within the group.
    pub y: Vec<f64>,
    pub n_units: usize,
}

/// Stations grouped by quantiles of one margin share.
#[derive(Debug, Clone)]
pub struct QuantileProfile {
    /// Weighted quantile values bounding the groups (`n_groups + 1` of them).
    pub group_edges: Vec<f64>,
    pub points: Vec<ProfilePoint>,
    /// Which margin share defined the grouping.
    pub group_by: usize,
    /// Which column's proportions are tracked.
    pub col: usize,
}

/// Groups stations by size-weighted quantiles of `x_u,group_by` and pools,
/// within each group, the proportion of column `col` for every row
/// category. With one group this returns exactly the overall table's
/// proportions of that column.
pub fn quantile_profile(
    units: &[UnitCounts],
    group_by: usize,
    n_groups: usize,
    col: usize,
) -> Result<QuantileProfile> {
    let (n_rows, n_cols) = common_dims(units)?;
    if group_by >= n_rows {
        return Err(Error::Validation(format!(
            "grouping row {group_by} outside {n_rows} rows"
        )));
    }
    if col >= n_cols {
        return Err(Error::Validation(format!(
            "tracked column {col} outside {n_cols} columns"
        )));
    }
    if n_groups == 0 {
        return Err(Error::Validation("need at least 1 group".into()));
    }
    if units.len() < n_groups {
        return Err(Error::InsufficientUnits {
            need: n_groups,
            got: units.len(),
            groups: n_groups,
        });
    }

    // Sort by grouping share with ties broken by unit id, then cut the
    // cumulative size weight into equal slices.
    let mut order: Vec<usize> = (0..units.len()).collect();
    let share = |k: usize| margins_of(&units[k]).row_share(group_by);
    order.sort_by(|&a, &b| {
        share(a)
            .partial_cmp(&share(b))
            .expect("finite shares")
            .then_with(|| units[a].unit_id().cmp(units[b].unit_id()))
    });
    let total_weight: f64 = units.iter().map(|u| u.total() as f64).sum();

    let mut groups: Vec<Vec<usize>> = vec![vec![]; n_groups];
    let mut edges = vec![f64::NAN; n_groups + 1];
    edges[0] = share(order[0]);
    edges[n_groups] = share(order[order.len() - 1]);
    let mut cum = 0.0;
    for &k in &order {
        let g = ((cum * n_groups as f64 / total_weight).floor() as usize).min(n_groups - 1);
        if groups[g].is_empty() && g > 0 {
            edges[g] = share(k);
        }
        groups[g].push(k);
        cum += units[k].total() as f64;
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InsufficientUnits {
            need: n_groups,
            got: units.len(),
            groups: n_groups,
        });
    }

    let points = groups
        .iter()
        .map(|members| {
            let mut wsum = 0.0;
            let mut xsum = 0.0;
            let mut col_counts = vec![0u64; n_rows];
            let mut row_counts = vec![0u64; n_rows];
            for &k in members {
                let u = &units[k];
                let w = u.total() as f64;
                wsum += w;
                xsum += w * share(k);
                for i in 0..n_rows {
                    col_counts[i] += u.get(i, col);
                    row_counts[i] += u.row_total(i);
                }
            }
            let y = (0..n_rows)
                .map(|i| {
                    if row_counts[i] == 0 {
                        f64::NAN
                    } else {
                        col_counts[i] as f64 / row_counts[i] as f64
                    }
                })
                .collect();
            ProfilePoint {
                x: xsum / wsum,
                y,
                n_units: members.len(),
            }
        })
        .collect();

    Ok(QuantileProfile {
        group_edges: edges,
        points,
        group_by,
        col,
    })
}

/// A within-unit 2x2 table drawn as the line from `(0, f_12)` to
/// `(1, f_22)`.
#[derive(Debug, Clone)]
pub struct UnitSegment {
    pub unit_id: String,
    /// `f_12`: the column-2 proportion of row 1 (value at x = 0).
    pub at0: f64,
    /// `f_22`: the column-2 proportion of row 2 (value at x = 1).
    pub at1: f64,
}

/// The ecological observation of one station.
#[derive(Debug, Clone)]
pub struct EcologicalPoint {
    pub unit_id: String,
    /// Row-2 margin share `x_2`.
    pub x: f64,
    /// Column-2 margin share `y_2`.
    pub y: f64,
    pub size: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct Line {
    pub intercept: f64,
    pub slope: f64,
}

impl Line {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Everything needed to draw the 2x2 fallacy picture: one segment per
/// station, the ecological scatter, its least-squares line, and the line of
/// the overall table.
#[derive(Debug, Clone)]
pub struct GeometryExport {
    pub segments: Vec<UnitSegment>,
    pub points: Vec<EcologicalPoint>,
    /// Least-squares regression of `y_2` on `x_2` over the stations.
    pub regression: Line,
    /// The overall table drawn the same way as the unit segments.
    pub overall: UnitSegment,
}

/// Builds the 2x2 geometry export. Every station must have both row totals
/// positive, since its segment is undefined otherwise.
pub fn two_by_two_geometry(units: &[UnitCounts]) -> Result<GeometryExport> {
    let (n_rows, n_cols) = common_dims(units)?;
    if n_rows != 2 || n_cols != 2 {
        return Err(Error::DimensionError {
            rows: n_rows,
            cols: n_cols,
        });
    }
    let mut segments = Vec::with_capacity(units.len());
    let mut points = Vec::with_capacity(units.len());
    for u in units {
        let f1 = u
            .row_proportions(0)
            .ok_or_else(|| Error::Validation(format!("unit '{}': row 1 is empty", u.unit_id())))?;
        let f2 = u
            .row_proportions(1)
            .ok_or_else(|| Error::Validation(format!("unit '{}': row 2 is empty", u.unit_id())))?;
        let m = margins_of(u);
        segments.push(UnitSegment {
            unit_id: u.unit_id().to_string(),
            at0: f1[1],
            at1: f2[1],
        });
        points.push(EcologicalPoint {
            unit_id: u.unit_id().to_string(),
            x: m.row_share(1),
            y: m.col_share(1),
            size: u.total(),
        });
    }

    let regression = fit_line(&points)?;
    let overall_table = aggregate_units(units)?;
    let overall = UnitSegment {
        unit_id: "overall".into(),
        at0: overall_table.get(0, 1),
        at1: overall_table.get(1, 1),
    };
    Ok(GeometryExport {
        segments,
        points,
        regression,
        overall,
    })
}

/// Unweighted least squares through the ecological points, as drawn in a
/// scatter plot.
fn fit_line(points: &[EcologicalPoint]) -> Result<Line> {
    let n = points.len() as f64;
    let mx: f64 = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my: f64 = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for p in points {
        sxx += (p.x - mx) * (p.x - mx);
        sxy += (p.x - mx) * (p.y - my);
    }
    if sxx <= 1e-14 * n {
        return Err(Error::InsufficientVariation { row: 1 });
    }
    let slope = sxy / sxx;
    Ok(Line {
        intercept: my - slope * mx,
        slope,
    })
}
