//! File formats: individual and aggregated CSV, estimate tables, and the
//! model document.
//!
//! Individual CSV: `unit_id,row_index,col_index,count` with 0-based
//! indices; cells may be omitted (treated as zero) but not repeated.
//! Aggregated CSV: `unit_id,x_0..x_{R-1},y_0..y_{C-1}` as integer counts,
//! plus any extra columns read as named real-valued covariates.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logit::{CompiledDesign, CovariateDesign, LogitModel};
use crate::tables::{ProportionTable, UnitCounts, UnitMargins};

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| format_err(path, e.to_string()))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

const INDIVIDUAL_HEADER: [&str; 4] = ["unit_id", "row_index", "col_index", "count"];

/// Reads an individual-data CSV. Table dimensions are the smallest grid
/// covering every index seen; all units share them.
pub fn read_individual_csv(path: impl AsRef<Path>) -> Result<Vec<UnitCounts>> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| format_err(path, e.to_string()))?
        .clone();
    if headers.iter().take(4).ne(INDIVIDUAL_HEADER) {
        let found: Vec<&str> = headers.iter().collect();
        let mut message = format!(
            "expected individual-data header '{}', found '{}'",
            INDIVIDUAL_HEADER.join(","),
            found.join(",")
        );
        if found.iter().any(|h| h.starts_with("x_")) {
            message.push_str(
                "; this looks like aggregated data, which cannot drive oracle-mode \
                 diagnostics or individual fits",
            );
        }
        return Err(format_err(path, message));
    }

    // Preserve first-appearance order of units.
    let mut order: Vec<String> = vec![];
    let mut cells: HashMap<String, HashMap<(usize, usize), u64>> = HashMap::new();
    let mut n_rows = 0usize;
    let mut n_cols = 0usize;
    for (k, record) in reader.records().enumerate() {
        let line = k + 2; // header is line 1
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let field = |idx: usize, name: &str| -> Result<&str> {
            record
                .get(idx)
                .ok_or_else(|| format_err(path, format!("line {line}: missing {name}")))
        };
        let unit_id = field(0, "unit_id")?.to_string();
        let parse_usize = |idx: usize, name: &str| -> Result<usize> {
            field(idx, name)?.parse::<usize>().map_err(|_| {
                format_err(
                    path,
                    format!(
                        "line {line}: bad {name} '{}'",
                        record.get(idx).unwrap_or("")
                    ),
                )
            })
        };
        let row = parse_usize(1, "row_index")?;
        let col = parse_usize(2, "col_index")?;
        let count = field(3, "count")?.parse::<u64>().map_err(|_| {
            format_err(
                path,
                format!(
                    "line {line}: bad count '{}' (counts are non-negative integers)",
                    record.get(3).unwrap_or("")
                ),
            )
        })?;
        n_rows = n_rows.max(row + 1);
        n_cols = n_cols.max(col + 1);
        if !cells.contains_key(&unit_id) {
            order.push(unit_id.clone());
        }
        let entry = cells.entry(unit_id.clone()).or_default();
        if entry.insert((row, col), count).is_some() {
            return Err(format_err(
                path,
                format!("line {line}: duplicate cell ({row},{col}) for unit '{unit_id}'"),
            ));
        }
    }
    if order.is_empty() {
        return Err(format_err(path, "no data rows"));
    }
    if n_rows < 2 || n_cols < 2 {
        return Err(format_err(
            path,
            format!("table must be at least 2x2, found {n_rows}x{n_cols}"),
        ));
    }
    order
        .into_iter()
        .map(|unit_id| {
            let unit_cells = &cells[&unit_id];
            let mut grid = vec![vec![0u64; n_cols]; n_rows];
            for (&(i, j), &c) in unit_cells {
                grid[i][j] = c;
            }
            UnitCounts::new(unit_id, grid)
        })
        .collect()
}

/// Writes an individual-data CSV including explicit zero cells, in unit
/// order then row-major cell order.
pub fn write_individual_csv(path: impl AsRef<Path>, units: &[UnitCounts]) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", INDIVIDUAL_HEADER.join(","))?;
    for u in units {
        for i in 0..u.n_rows() {
            for j in 0..u.n_cols() {
                writeln!(out, "{},{},{},{}", u.unit_id(), i, j, u.get(i, j))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads an aggregated-data CSV into margin records.
pub fn read_aggregated_csv(path: impl AsRef<Path>) -> Result<Vec<UnitMargins>> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| format_err(path, e.to_string()))?
        .clone();
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    if names.first().map(String::as_str) != Some("unit_id") {
        return Err(format_err(
            path,
            format!(
                "expected first column 'unit_id', found '{}'",
                names.first().cloned().unwrap_or_default()
            ),
        ));
    }
    let n_rows = names
        .iter()
        .skip(1)
        .take_while(|n| n.starts_with("x_"))
        .count();
    let n_cols = names
        .iter()
        .skip(1 + n_rows)
        .take_while(|n| n.starts_with("y_"))
        .count();
    if n_rows < 2 || n_cols < 2 {
        return Err(format_err(
            path,
            "need contiguous 'x_0..' then 'y_0..' count columns (at least two of each)",
        ));
    }
    for (k, name) in names[1..1 + n_rows].iter().enumerate() {
        if name != &format!("x_{k}") {
            return Err(format_err(
                path,
                format!("margin columns out of order: expected 'x_{k}', found '{name}'"),
            ));
        }
    }
    for (k, name) in names[1 + n_rows..1 + n_rows + n_cols].iter().enumerate() {
        if name != &format!("y_{k}") {
            return Err(format_err(
                path,
                format!("margin columns out of order: expected 'y_{k}', found '{name}'"),
            ));
        }
    }
    let extras: Vec<(usize, String)> = names
        .iter()
        .enumerate()
        .skip(1 + n_rows + n_cols)
        .map(|(idx, n)| (idx, n.clone()))
        .collect();

    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = vec![];
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let unit_id = record
            .get(0)
            .ok_or_else(|| format_err(path, format!("line {line}: missing unit_id")))?
            .to_string();
        if let Some(prev) = seen.insert(unit_id.clone(), line) {
            return Err(format_err(
                path,
                format!("line {line}: unit '{unit_id}' already defined at line {prev}"),
            ));
        }
        let count_at = |idx: usize| -> Result<u64> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<u64>().map_err(|_| {
                format_err(
                    path,
                    format!(
                        "line {line}, column '{}': bad count '{raw}'",
                        names.get(idx).map(String::as_str).unwrap_or("?")
                    ),
                )
            })
        };
        let row_totals: Vec<u64> = (0..n_rows)
            .map(|i| count_at(1 + i))
            .collect::<Result<_>>()?;
        let col_totals: Vec<u64> = (0..n_cols)
            .map(|j| count_at(1 + n_rows + j))
            .collect::<Result<_>>()?;
        let mut covariates = BTreeMap::new();
        for (idx, name) in &extras {
            let raw = record.get(*idx).unwrap_or("");
            let v = raw.parse::<f64>().map_err(|_| {
                format_err(
                    path,
                    format!("line {line}, column '{name}': bad value '{raw}'"),
                )
            })?;
            covariates.insert(name.clone(), v);
        }
        let margins = UnitMargins::new(unit_id, row_totals, col_totals)
            .map_err(|e| format_err(path, format!("line {line}: {e}")))?
            .with_covariates(covariates);
        out.push(margins);
    }
    if out.is_empty() {
        return Err(format_err(path, "no data rows"));
    }
    Ok(out)
}

/// Writes an aggregated-data CSV. Covariate columns are the sorted union of
/// names, which every unit must carry.
pub fn write_aggregated_csv(path: impl AsRef<Path>, margins: &[UnitMargins]) -> Result<()> {
    let path = path.as_ref();
    let first = margins
        .first()
        .ok_or_else(|| Error::Validation("no units to write".into()))?;
    let (n_rows, n_cols) = (first.n_rows(), first.n_cols());
    let mut covariate_names: Vec<String> = margins
        .iter()
        .flat_map(|m| m.covariates().keys().cloned())
        .collect();
    covariate_names.sort();
    covariate_names.dedup();

    let mut out = BufWriter::new(File::create(path)?);
    let mut header = vec!["unit_id".to_string()];
    header.extend((0..n_rows).map(|i| format!("x_{i}")));
    header.extend((0..n_cols).map(|j| format!("y_{j}")));
    header.extend(covariate_names.iter().cloned());
    writeln!(out, "{}", header.join(","))?;
    for m in margins {
        let mut fields = vec![m.unit_id().to_string()];
        fields.extend(m.row_totals().iter().map(u64::to_string));
        fields.extend(m.col_totals().iter().map(u64::to_string));
        for name in &covariate_names {
            let v = m.covariate(name).ok_or_else(|| Error::MissingCovariate {
                name: name.clone(),
                unit_id: m.unit_id().to_string(),
            })?;
            fields.push(v.to_string());
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a headerless numeric grid, one table row per line.
pub fn write_table_csv(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path)?);
    for row in rows {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a headerless numeric grid as a row-stochastic table.
pub fn read_table_csv(path: impl AsRef<Path>) -> Result<ProportionTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| format_err(path, e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = vec![];
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let row: Vec<f64> = record
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| format_err(path, format!("line {}: bad value '{v}'", k + 1)))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    ProportionTable::new(rows).map_err(|e| format_err(path, e.to_string()))
}

/// A fitted model with everything needed to evaluate it elsewhere: the
/// design, its frozen centering offsets, and the table dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub method: String,
    pub dims: [usize; 2],
    pub model: LogitModel,
    pub design: CovariateDesign,
    pub centering: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
}

impl ModelDocument {
    pub fn new(method: &str, model: &LogitModel, design: &CompiledDesign) -> Self {
        Self {
            method: method.to_string(),
            dims: [design.n_rows(), design.n_cols()],
            model: model.clone(),
            design: design.design().clone(),
            centering: design.offsets().to_vec(),
            objective: None,
            grad_norm: None,
        }
    }

    pub fn compiled_design(&self) -> Result<CompiledDesign> {
        CompiledDesign::from_parts(
            self.design.clone(),
            self.dims[0],
            self.dims[1],
            self.centering.clone(),
        )
    }
}

pub fn write_model_json(path: impl AsRef<Path>, doc: &ModelDocument) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut out, doc)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_model_json(path: impl AsRef<Path>) -> Result<ModelDocument> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| format_err(path, e.to_string()))?;
    let doc: ModelDocument =
        serde_json::from_reader(file).map_err(|e| format_err(path, e.to_string()))?;
    doc.model
        .validate_against(&doc.compiled_design()?)
        .map_err(|e| format_err(path, e.to_string()))?;
    Ok(doc)
}

pub fn read_spec_json(path: impl AsRef<Path>) -> Result<crate::genesis::GeneratorSpec> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| format_err(path, e.to_string()))?;
    let spec: crate::genesis::GeneratorSpec =
        serde_json::from_reader(file).map_err(|e| format_err(path, e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn read_design_json(path: impl AsRef<Path>) -> Result<CovariateDesign> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| format_err(path, e.to_string()))?;
    serde_json::from_reader(file).map_err(|e| format_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::margins_of;
    use std::fs;

    #[test]
    fn individual_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("individual.csv");
        let units = vec![
            UnitCounts::new("a", vec![vec![3, 0], vec![2, 7]]).unwrap(),
            UnitCounts::new("b", vec![vec![0, 5], vec![1, 0]]).unwrap(),
        ];
        write_individual_csv(&path, &units).unwrap();
        let back = read_individual_csv(&path).unwrap();
        assert_eq!(back, units);
    }

    #[test]
    fn individual_rejects_duplicates_and_bad_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(
            &path,
            "unit_id,row_index,col_index,count\na,0,0,3\na,0,0,4\na,1,1,1\n",
        )
        .unwrap();
        let err = read_individual_csv(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate cell"));
        assert!(err.to_string().contains("line 3"));

        fs::write(&path, "unit,who,what,count\na,0,0,3\n").unwrap();
        let err = read_individual_csv(&path).unwrap_err();
        assert!(err.to_string().contains("expected individual-data header"));
    }

    #[test]
    fn aggregated_header_hints_at_oracle_mode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agg.csv");
        fs::write(&path, "unit_id,x_0,x_1,y_0,y_1\na,4,6,5,5\n").unwrap();
        let err = read_individual_csv(&path).unwrap_err();
        assert!(err.to_string().contains("aggregated data"));
    }

    #[test]
    fn aggregated_round_trip_with_covariates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aggregated.csv");
        let m = vec![
            UnitMargins::new("a", vec![40, 60], vec![55, 45])
                .unwrap()
                .with_covariates([("income".to_string(), 1.25)].into()),
            UnitMargins::new("b", vec![10, 90], vec![30, 70])
                .unwrap()
                .with_covariates([("income".to_string(), -0.5)].into()),
        ];
        write_aggregated_csv(&path, &m).unwrap();
        let back = read_aggregated_csv(&path).unwrap();
        assert_eq!(back, m);
        let content = fs::read_to_string(&path).unwrap();
        assert!(content.starts_with("unit_id,x_0,x_1,y_0,y_1,income\n"));
    }

    #[test]
    fn aggregated_validates_per_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agg.csv");
        // Unbalanced margins on line 3.
        fs::write(
            &path,
            "unit_id,x_0,x_1,y_0,y_1\na,40,60,50,50\nb,40,60,50,40\n",
        )
        .unwrap();
        let err = read_aggregated_csv(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");

        fs::write(&path, "unit_id,x_0,x_1,y_0,y_1\na,40,-1,20,19\n").unwrap();
        let err = read_aggregated_csv(&path).unwrap_err();
        assert!(err.to_string().contains("bad count"));
    }

    #[test]
    fn margins_of_generated_units_round_trip() {
        let units = vec![
            UnitCounts::new("a", vec![vec![3, 4], vec![2, 7]]).unwrap(),
            UnitCounts::new("b", vec![vec![9, 5], vec![1, 8]]).unwrap(),
        ];
        let margins: Vec<UnitMargins> = units.iter().map(margins_of).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aggregated.csv");
        write_aggregated_csv(&path, &margins).unwrap();
        assert_eq!(read_aggregated_csv(&path).unwrap(), margins);
    }

    #[test]
    fn table_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("estimate.csv");
        let t = ProportionTable::new(vec![vec![0.125, 0.875], vec![0.6, 0.4]]).unwrap();
        write_table_csv(&path, t.rows()).unwrap();
        let back = read_table_csv(&path).unwrap();
        assert_eq!(back, t);
        let content = fs::read_to_string(&path).unwrap();
        assert_eq!(content, "0.125,0.875\n0.6,0.4\n");
    }

    #[test]
    fn model_document_round_trip() {
        use crate::logit::{CovariateSource, DesignEntry};
        let data = vec![
            UnitMargins::new("a", vec![40, 60], vec![55, 45]).unwrap(),
            UnitMargins::new("b", vec![70, 30], vec![45, 55]).unwrap(),
        ];
        let design =
            CovariateDesign::new(vec![DesignEntry::new(0, 0, CovariateSource::RowMargin(1))]);
        let compiled = CompiledDesign::new(design, &data).unwrap();
        let model = LogitModel {
            alpha: vec![vec![0.25], vec![-1.5]],
            beta: vec![0.75],
            phi: Some(0.1),
        };
        let doc = ModelDocument::new("king-ols", &model, &compiled);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        write_model_json(&path, &doc).unwrap();
        let back = read_model_json(&path).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.centering, compiled.offsets());
        assert_eq!(back.dims, [2, 2]);
    }
}
