//! Covariate designs: which table cells depend on which unit-level
//! quantities, and how those quantities are transformed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tables::UnitMargins;

/// Where a covariate value comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CovariateSource {
    /// The unit's own marginal row proportion `x_i`.
    RowMargin(usize),
    /// A named external covariate attached to the unit.
    External(String),
}

impl fmt::Display for CovariateSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateSource::RowMargin(i) => write!(f, "row_margin:{i}"),
            CovariateSource::External(name) => write!(f, "external:{name}"),
        }
    }
}

impl FromStr for CovariateSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(idx) = s.strip_prefix("row_margin:") {
            let i = idx.parse::<usize>().map_err(|_| {
                Error::Validation(format!("bad row index in covariate source '{s}'"))
            })?;
            Ok(CovariateSource::RowMargin(i))
        } else if let Some(name) = s.strip_prefix("external:") {
            if name.is_empty() {
                return Err(Error::Validation("empty external covariate name".into()));
            }
            Ok(CovariateSource::External(name.to_string()))
        } else {
            Err(Error::Validation(format!(
                "covariate source '{s}' must be 'row_margin:<i>' or 'external:<name>'"
            )))
        }
    }
}

impl Serialize for CovariateSource {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for CovariateSource {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Transformation applied to the raw covariate value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    /// Subtract the dataset mean; the default for row-margin sources so the
    /// intercepts describe the average-covariate table.
    Centered,
    LogitOfProportion,
}

/// One covariate term: cell `(i, j)` of the transition table depends on the
/// given source through the given transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEntry {
    pub cell: [usize; 2],
    pub source: CovariateSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
}

impl DesignEntry {
    pub fn new(row: usize, col: usize, source: CovariateSource) -> Self {
        Self {
            cell: [row, col],
            source,
            transform: None,
        }
    }

    /// The transform in effect: row margins default to centering, external
    /// covariates to identity.
    pub fn effective_transform(&self) -> Transform {
        self.transform.unwrap_or(match self.source {
            CovariateSource::RowMargin(_) => Transform::Centered,
            CovariateSource::External(_) => Transform::Identity,
        })
    }
}

/// A list of covariate terms for a transition model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateDesign {
    pub entries: Vec<DesignEntry>,
}

impl CovariateDesign {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(entries: Vec<DesignEntry>) -> Self {
        Self { entries }
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    /// Checks cells are inside an `n_rows` x `n_cols` table, row-margin
    /// indices exist, and no (cell, source) pair repeats.
    pub fn validate(&self, n_rows: usize, n_cols: usize) -> Result<()> {
        for (m, e) in self.entries.iter().enumerate() {
            let [i, j] = e.cell;
            if i >= n_rows || j >= n_cols {
                return Err(Error::Validation(format!(
                    "design entry {m}: cell ({i},{j}) outside {n_rows}x{n_cols} table"
                )));
            }
            if let CovariateSource::RowMargin(r) = e.source {
                if r >= n_rows {
                    return Err(Error::Validation(format!(
                        "design entry {m}: row margin {r} outside {n_rows} rows"
                    )));
                }
            }
            for other in &self.entries[..m] {
                if other.cell == e.cell && other.source == e.source {
                    return Err(Error::Validation(format!(
                        "duplicate design entry for cell ({i},{j}) and source {}",
                        e.source
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The cells of the linear predictor affected by one design entry.
///
/// An entry on a non-reference cell shifts that cell's log-odds directly.
/// An entry on the reference column is re-expressed exactly as the opposite
/// shift on every other cell of the row, which leaves the model identified.
#[derive(Debug, Clone)]
pub(crate) struct EntryTargets {
    pub row: usize,
    /// `(column, sign)` pairs over the non-reference columns.
    pub cols: Vec<(usize, f64)>,
}

/// A design resolved against a dataset: centering offsets are frozen so the
/// same model can later be evaluated on any unit.
#[derive(Debug, Clone)]
pub struct CompiledDesign {
    design: CovariateDesign,
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<f64>,
    targets: Vec<EntryTargets>,
}

impl CompiledDesign {
    /// Resolves `design` against `data`, computing centering offsets from
    /// the dataset means. Every referenced external covariate must exist on
    /// every unit.
    pub fn new(design: CovariateDesign, data: &[UnitMargins]) -> Result<Self> {
        let (n_rows, n_cols) = crate::tables::common_margin_dims(data)?;
        design.validate(n_rows, n_cols)?;
        let mut offsets = Vec::with_capacity(design.entries.len());
        for entry in &design.entries {
            let mut sum = 0.0;
            for u in data {
                sum += raw_value(entry, u)?;
            }
            let offset = match entry.effective_transform() {
                Transform::Centered => sum / data.len() as f64,
                Transform::Identity | Transform::LogitOfProportion => 0.0,
            };
            offsets.push(offset);
        }
        Self::from_parts(design, n_rows, n_cols, offsets)
    }

    /// Rebuilds a compiled design from stored parts (e.g. a model file).
    pub fn from_parts(
        design: CovariateDesign,
        n_rows: usize,
        n_cols: usize,
        offsets: Vec<f64>,
    ) -> Result<Self> {
        design.validate(n_rows, n_cols)?;
        if offsets.len() != design.entries.len() {
            return Err(Error::Validation(format!(
                "{} centering offsets for {} design entries",
                offsets.len(),
                design.entries.len()
            )));
        }
        if n_cols < 2 {
            return Err(Error::Validation("need at least 2 columns".into()));
        }
        let reference = n_cols - 1;
        let targets = design
            .entries
            .iter()
            .map(|e| {
                let [i, j] = e.cell;
                let cols = if j == reference {
                    (0..reference).map(|k| (k, -1.0)).collect()
                } else {
                    vec![(j, 1.0)]
                };
                EntryTargets { row: i, cols }
            })
            .collect();
        Ok(Self {
            design,
            n_rows,
            n_cols,
            offsets,
            targets,
        })
    }

    pub fn design(&self) -> &CovariateDesign {
        &self.design
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_entries(&self) -> usize {
        self.design.entries.len()
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub(crate) fn targets(&self) -> &[EntryTargets] {
        &self.targets
    }

    /// Evaluates the covariate vector `z` for one unit.
    pub fn covariates_for(&self, u: &UnitMargins) -> Result<Vec<f64>> {
        if u.n_rows() != self.n_rows || u.n_cols() != self.n_cols {
            return Err(Error::DimensionMismatch(format!(
                "unit '{}' has margins {}x{}, design expects {}x{}",
                u.unit_id(),
                u.n_rows(),
                u.n_cols(),
                self.n_rows,
                self.n_cols
            )));
        }
        self.design
            .entries
            .iter()
            .zip(&self.offsets)
            .map(|(entry, offset)| Ok(raw_value(entry, u)? - offset))
            .collect()
    }
}

fn raw_value(entry: &DesignEntry, u: &UnitMargins) -> Result<f64> {
    let v = match &entry.source {
        CovariateSource::RowMargin(i) => u.row_share(*i),
        CovariateSource::External(name) => {
            u.covariate(name).ok_or_else(|| Error::MissingCovariate {
                name: name.clone(),
                unit_id: u.unit_id().to_string(),
            })?
        }
    };
    match entry.effective_transform() {
        Transform::Identity | Transform::Centered => Ok(v),
        Transform::LogitOfProportion => {
            let p = v.clamp(1e-9, 1.0 - 1e-9);
            Ok((p / (1.0 - p)).ln())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_string_round_trip() {
        for s in ["row_margin:2", "external:income"] {
            let src: CovariateSource = s.parse().unwrap();
            assert_eq!(src.to_string(), s);
        }
        assert!("margin:1".parse::<CovariateSource>().is_err());
        assert!("external:".parse::<CovariateSource>().is_err());
    }

    #[test]
    fn design_json_matches_documented_schema() {
        let design = CovariateDesign::new(vec![DesignEntry {
            cell: [0, 1],
            source: CovariateSource::RowMargin(1),
            transform: Some(Transform::Centered),
        }]);
        let json = serde_json::to_string(&design).unwrap();
        assert_eq!(
            json,
            r#"{"entries":[{"cell":[0,1],"source":"row_margin:1","transform":"centered"}]}"#
        );
        let back: CovariateDesign = serde_json::from_str(&json).unwrap();
        assert_eq!(back, design);
    }

    #[test]
    fn duplicate_entries_rejected() {
        let design = CovariateDesign::new(vec![
            DesignEntry::new(0, 0, CovariateSource::RowMargin(0)),
            DesignEntry::new(0, 0, CovariateSource::RowMargin(0)),
        ]);
        assert!(design.validate(2, 2).is_err());
    }

    #[test]
    fn centering_uses_dataset_mean() {
        let data = vec![
            UnitMargins::new("a", vec![30, 70], vec![50, 50]).unwrap(),
            UnitMargins::new("b", vec![70, 30], vec![50, 50]).unwrap(),
        ];
        let design =
            CovariateDesign::new(vec![DesignEntry::new(0, 0, CovariateSource::RowMargin(1))]);
        let compiled = CompiledDesign::new(design, &data).unwrap();
        assert!((compiled.offsets()[0] - 0.5).abs() < 1e-15);
        let z = compiled.covariates_for(&data[0]).unwrap();
        assert!((z[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn missing_external_covariate_is_reported() {
        let data = vec![
            UnitMargins::new("a", vec![30, 70], vec![50, 50]).unwrap(),
            UnitMargins::new("b", vec![70, 30], vec![50, 50]).unwrap(),
        ];
        let design = CovariateDesign::new(vec![DesignEntry::new(
            0,
            0,
            CovariateSource::External("income".into()),
        )]);
        let err = CompiledDesign::new(design, &data).unwrap_err();
        assert!(matches!(err, Error::MissingCovariate { .. }));
    }
}
