//! Diagnostic CSV writers and the stdout comparison rendering.
//!
//! All diagnostic files share one tidy schema, `series,x,y`, so any
//! plotting tool can consume them directly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ecotrans::lens::{BiasCorrelation, GeometryExport, QuantileProfile};
use ecotrans::tables::ProportionTable;
use ecotrans::Result;

pub fn write_bias_correlation(path: &Path, corr: &BiasCorrelation) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "series,x,y")?;
    for (i, j, i2, v) in corr.iter() {
        writeln!(out, "f{i}{j},{i2},{v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_profile(path: &Path, profile: &QuantileProfile) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "series,x,y")?;
    for point in &profile.points {
        for (i, y) in point.y.iter().enumerate() {
            writeln!(out, "row{i},{},{y}", point.x)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_geometry(path: &Path, geo: &GeometryExport) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "series,x,y")?;
    for s in &geo.segments {
        writeln!(out, "segment:{},0,{}", s.unit_id, s.at0)?;
        writeln!(out, "segment:{},1,{}", s.unit_id, s.at1)?;
    }
    for p in &geo.points {
        writeln!(out, "point:{},{},{}", p.unit_id, p.x, p.y)?;
    }
    writeln!(out, "regression,0,{}", geo.regression.at(0.0))?;
    writeln!(out, "regression,1,{}", geo.regression.at(1.0))?;
    writeln!(out, "overall,0,{}", geo.overall.at0)?;
    writeln!(out, "overall,1,{}", geo.overall.at1)?;
    out.flush()?;
    Ok(())
}

/// One method's overall table in the comparison.
pub struct ComparisonColumn {
    pub label: String,
    pub table: ProportionTable,
}

/// Writes the flat comparison: one line per cell, one column per method.
pub fn write_comparison(
    path: &Path,
    individual: &ProportionTable,
    columns: &[ComparisonColumn],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = vec![
        "row".to_string(),
        "col".to_string(),
        "individual".to_string(),
    ];
    header.extend(columns.iter().map(|c| c.label.replace('-', "_")));
    writeln!(out, "{}", header.join(","))?;
    for i in 0..individual.n_rows() {
        for j in 0..individual.n_cols() {
            let mut fields = vec![
                i.to_string(),
                j.to_string(),
                individual.get(i, j).to_string(),
            ];
            fields.extend(columns.iter().map(|c| c.table.get(i, j).to_string()));
            writeln!(out, "{}", fields.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Renders the comparison as an aligned text table for stdout.
pub fn render_comparison(
    title: &str,
    individual: &ProportionTable,
    columns: &[ComparisonColumn],
) -> String {
    let mut s = String::new();
    s.push_str(title);
    s.push('\n');
    let label_width = 10;
    let col_width = columns
        .iter()
        .map(|c| c.label.len())
        .chain(["individual".len()])
        .max()
        .unwrap_or(10)
        .max(7)
        + 2;
    s.push_str(&format!("{:label_width$}", "cell"));
    s.push_str(&format!("{:>col_width$}", "individual"));
    for c in columns {
        s.push_str(&format!("{:>col_width$}", c.label));
    }
    s.push('\n');
    for i in 0..individual.n_rows() {
        for j in 0..individual.n_cols() {
            s.push_str(&format!("{:label_width$}", format!("x{i} -> y{j}")));
            s.push_str(&format!("{:>col_width$.3}", individual.get(i, j)));
            for c in columns {
                s.push_str(&format!("{:>col_width$.3}", c.table.get(i, j)));
            }
            s.push('\n');
        }
    }
    s
}
