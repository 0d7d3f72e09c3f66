//! Subcommand implementations. Every command writes a self-describing
//! output directory with a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ecotrans::genesis::presets::{self, Scenario};
use ecotrans::genesis::GeneratedData;
use ecotrans::goodman::fit_goodman;
use ecotrans::lens;
use ecotrans::logit::{
    fit_logit_ols, fit_logit_wls, CompiledDesign, CovariateDesign, LogitFit, OptimizerOptions,
    WlsOptions,
};
use ecotrans::seam::{self, UnitEstimator};
use ecotrans::tables::{aggregate_units, margins_of, ProportionTable, UnitCounts, UnitMargins};
use ecotrans::verdict::{fit_individual_logistic, reconstruct_overall, score, ScoreReport};
use ecotrans::{io, Error, Result};
use serde_json::json;

use crate::args::{
    AdjustArgs, DiagnoseArgs, EvaluateArgs, FitArgs, FitOptions, GenerateArgs, Method, ReportArgs,
};
use crate::manifest::Manifest;
use crate::outputs::{self, ComparisonColumn};

fn ensure_dir(out: &Option<PathBuf>, run_id: &str) -> Result<PathBuf> {
    let dir = out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(run_id));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into())
}

fn optimizer_options(opts: &FitOptions) -> OptimizerOptions {
    OptimizerOptions {
        tol: opts.tol,
        max_iter: opts.max_iter,
        restarts: opts.restarts,
        seed: opts.opt_seed,
        size_weights: !opts.no_size_weights,
    }
}

fn fit_options_json(opts: &FitOptions) -> serde_json::Value {
    json!({
        "size_weights": !opts.no_size_weights,
        "tol": opts.tol,
        "max_iter": opts.max_iter,
        "restarts": opts.restarts,
        "opt_seed": opts.opt_seed,
    })
}

/// Writes the dataset files shared by `generate` and `report`.
fn write_dataset(
    dir: &Path,
    data: &GeneratedData,
    manifest: &mut Manifest,
) -> Result<Vec<UnitMargins>> {
    io::write_individual_csv(dir.join("individual.csv"), &data.units)?;
    manifest.record_output("individual.csv");
    let margins: Vec<UnitMargins> = data.units.iter().map(margins_of).collect();
    io::write_aggregated_csv(dir.join("aggregated.csv"), &margins)?;
    manifest.record_output("aggregated.csv");
    if let Some(latents) = &data.latent {
        let mut rows = String::from("unit_id,level,row_index,col_index,count\n");
        for l in latents {
            for (level, table) in l.by_level.iter().enumerate() {
                for (i, row) in table.iter().enumerate() {
                    for (j, c) in row.iter().enumerate() {
                        rows.push_str(&format!("{},{level},{i},{j},{c}\n", l.unit_id));
                    }
                }
            }
        }
        fs::write(dir.join("latent.csv"), rows)?;
        manifest.record_output("latent.csv");
    }
    Ok(margins)
}

pub fn generate(args: &GenerateArgs) -> Result<PathBuf> {
    let (scenario, label) = match (&args.scenario, &args.spec) {
        (Some(name), None) => {
            let seed = args.seed.unwrap_or(7);
            (presets::by_name(name, args.n_units, seed)?, name.clone())
        }
        (None, Some(path)) => {
            let mut spec = io::read_spec_json(path)?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            (Scenario::Generated(spec), file_stem(path))
        }
        _ => {
            return Err(Error::Validation(
                "pass exactly one of --scenario or --spec".into(),
            ))
        }
    };
    let seed = scenario.seed();
    let run_id = match seed {
        Some(s) => format!("generate-{label}-n{}-s{s}", args.n_units),
        None => format!("generate-{label}"),
    };
    let dir = ensure_dir(&args.out, &run_id)?;
    let data = scenario.realize()?;

    let mut manifest = Manifest::new("generate", json!({ "n_units": args.n_units }))
        .with_scenario(scenario.descriptor(), seed);
    fs::write(
        dir.join("scenario.json"),
        format!("{:#}\n", scenario.descriptor()),
    )?;
    manifest.record_output("scenario.json");
    write_dataset(&dir, &data, &mut manifest)?;
    manifest.write(&dir)?;
    println!("wrote {}", dir.display());
    Ok(dir)
}

struct FittedMethod {
    label: String,
    overall: ProportionTable,
    /// Per-unit capable estimator, for margin adjustment.
    estimator: FittedEstimator,
    metadata: serde_json::Value,
    model: Option<(ecotrans::logit::LogitModel, CompiledDesign)>,
}

enum FittedEstimator {
    Constant(ProportionTable),
    Model,
}

fn fit_method(
    method: Method,
    data: &[UnitMargins],
    design: &CovariateDesign,
    opts: &OptimizerOptions,
) -> Result<FittedMethod> {
    match method {
        Method::Goodman => {
            let est = fit_goodman(data, opts.size_weights)?;
            let metadata = json!({
                "method": "goodman",
                "size_weights": opts.size_weights,
                "stderr": est.stderr,
            });
            Ok(FittedMethod {
                label: "goodman".into(),
                overall: est.table.clone(),
                estimator: FittedEstimator::Constant(est.table),
                metadata,
                model: None,
            })
        }
        Method::KingOls | Method::BpWls => {
            let fit: LogitFit = if method == Method::KingOls {
                fit_logit_ols(data, design, opts)?
            } else {
                fit_logit_wls(
                    data,
                    design,
                    &WlsOptions {
                        optimizer: opts.clone(),
                        ..WlsOptions::default()
                    },
                )?
            };
            let overall = reconstruct_overall(&fit.model, &fit.design, data)?;
            let metadata = json!({
                "method": method.to_string(),
                "size_weights": opts.size_weights,
                "objective": fit.objective,
                "grad_norm": fit.grad_norm,
                "iterations": fit.iterations,
                "phi": fit.model.phi,
                "ridge_fallbacks": fit.ridge_fallbacks,
            });
            Ok(FittedMethod {
                label: method.to_string(),
                overall,
                estimator: FittedEstimator::Model,
                metadata,
                model: Some((fit.model, fit.design)),
            })
        }
    }
}

/// Margin-adjusts a fitted method's estimate over the dataset.
fn adjusted_table(
    fitted: &FittedMethod,
    data: &[UnitMargins],
    floor: f64,
) -> Result<ProportionTable> {
    match (&fitted.estimator, &fitted.model) {
        (FittedEstimator::Constant(table), _) => {
            let seed = floor_if_needed(table, floor)?;
            seam::adjusted_overall(UnitEstimator::Constant(&seed), data, 1e-8, 10_000)
        }
        (FittedEstimator::Model, Some((model, design))) => {
            seam::adjusted_overall(UnitEstimator::Model { model, design }, data, 1e-8, 10_000)
        }
        (FittedEstimator::Model, None) => unreachable!("model estimator always carries a model"),
    }
}

/// Floors hard zeros only when present, so positive estimates pass through
/// untouched.
fn floor_if_needed(table: &ProportionTable, floor: f64) -> Result<ProportionTable> {
    let has_zero = (0..table.n_rows()).any(|i| table.row(i).iter().any(|&p| p < floor));
    if has_zero && floor > 0.0 {
        seam::floor_positive(table, floor)
    } else {
        Ok(table.clone())
    }
}

pub fn fit(args: &FitArgs) -> Result<PathBuf> {
    let run_id = format!("fit-{}-{}", args.method, file_stem(&args.data));
    let dir = ensure_dir(&args.out, &run_id)?;
    let data = io::read_aggregated_csv(&args.data)?;
    let design = match &args.design {
        Some(path) => io::read_design_json(path)?,
        None => CovariateDesign::empty(),
    };
    let opts = optimizer_options(&args.opts);

    let mut options = fit_options_json(&args.opts);
    options["method"] = json!(args.method.to_string());
    options["adjust_margins"] = json!(args.adjust_margins);
    let mut manifest = Manifest::new("fit", options);
    manifest.record_input("data", &args.data)?;
    if let Some(path) = &args.design {
        manifest.record_input("design", path)?;
    }

    let fitted = fit_method(args.method, &data, &design, &opts)?;
    let estimate_name = format!("estimate-{}.csv", fitted.label);
    io::write_table_csv(dir.join(&estimate_name), fitted.overall.rows())?;
    manifest.record_output(&estimate_name);
    let meta_name = format!("estimate-{}.json", fitted.label);
    fs::write(dir.join(&meta_name), format!("{:#}\n", fitted.metadata))?;
    manifest.record_output(&meta_name);
    if let Some((model, compiled)) = &fitted.model {
        let mut doc = io::ModelDocument::new(&fitted.label, model, compiled);
        doc.objective = fitted.metadata["objective"].as_f64();
        doc.grad_norm = fitted.metadata["grad_norm"].as_f64();
        let model_name = format!("model-{}.json", fitted.label);
        io::write_model_json(dir.join(&model_name), &doc)?;
        manifest.record_output(&model_name);
    }
    if args.adjust_margins {
        let adjusted = adjusted_table(&fitted, &data, args.floor)?;
        let name = format!("estimate-{}-adjusted.csv", fitted.label);
        io::write_table_csv(dir.join(&name), adjusted.rows())?;
        manifest.record_output(&name);
    }
    manifest.write(&dir)?;
    println!("wrote {}", dir.display());
    Ok(dir)
}

pub fn adjust(args: &AdjustArgs) -> Result<PathBuf> {
    let run_id = format!("adjust-{}", file_stem(&args.estimate));
    let dir = ensure_dir(&args.out, &run_id)?;
    let estimate = io::read_table_csv(&args.estimate)?;
    let data = io::read_aggregated_csv(&args.data)?;
    let mut manifest = Manifest::new(
        "adjust",
        json!({ "tol": args.tol, "max_iter": args.max_iter, "floor": args.floor }),
    );
    manifest.record_input("estimate", &args.estimate)?;
    manifest.record_input("data", &args.data)?;

    let seed = floor_if_needed(&estimate, args.floor)?;
    let adjusted = seam::adjusted_overall(
        UnitEstimator::Constant(&seed),
        &data,
        args.tol,
        args.max_iter,
    )?;
    io::write_table_csv(dir.join("adjusted-overall.csv"), adjusted.rows())?;
    manifest.record_output("adjusted-overall.csv");
    manifest.write(&dir)?;
    println!("wrote {}", dir.display());
    Ok(dir)
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<PathBuf> {
    if !args.bias_corr && args.profile.is_none() && !args.geometry {
        return Err(Error::Validation(
            "choose at least one diagnostic: --bias-corr, --profile <row>, --geometry".into(),
        ));
    }
    let run_id = format!("diagnose-{}", file_stem(&args.data));
    let dir = ensure_dir(&args.out, &run_id)?;
    let units = io::read_individual_csv(&args.data)?;
    let mut manifest = Manifest::new(
        "diagnose",
        json!({
            "bias_corr": args.bias_corr,
            "profile": args.profile,
            "groups": args.groups,
            "col": args.col,
            "geometry": args.geometry,
        }),
    );
    manifest.record_input("data", &args.data)?;

    if args.bias_corr {
        let corr = lens::bias_correlation(&units)?;
        outputs::write_bias_correlation(&dir.join("bias-correlation.csv"), &corr)?;
        manifest.record_output("bias-correlation.csv");
    }
    if let Some(raw) = &args.profile {
        let row = parse_profile_row(raw)?;
        let col = args.col.unwrap_or(units[0].n_cols() - 1);
        let profile = lens::quantile_profile(&units, row, args.groups, col)?;
        let name = format!("profile-row{row}.csv");
        outputs::write_profile(&dir.join(&name), &profile)?;
        manifest.record_output(&name);
    }
    if args.geometry {
        let geo = lens::two_by_two_geometry(&units)?;
        outputs::write_geometry(&dir.join("geometry.csv"), &geo)?;
        manifest.record_output("geometry.csv");
    }
    manifest.write(&dir)?;
    println!("wrote {}", dir.display());
    Ok(dir)
}

fn parse_profile_row(raw: &str) -> Result<usize> {
    let trimmed = raw.strip_prefix("row=").unwrap_or(raw);
    trimmed.parse::<usize>().map_err(|_| {
        Error::Validation(format!(
            "--profile takes a row index like '1' or 'row=1', got '{raw}'"
        ))
    })
}

pub fn evaluate(args: &EvaluateArgs) -> Result<PathBuf> {
    let source = match (&args.model, &args.estimate) {
        (Some(p), None) => p,
        (None, Some(p)) => p,
        _ => {
            return Err(Error::Validation(
                "pass exactly one of --model or --estimate".into(),
            ))
        }
    };
    let run_id = format!("evaluate-{}", file_stem(source));
    let dir = ensure_dir(&args.out, &run_id)?;
    let truth_units = io::read_individual_csv(&args.truth)?;
    let truth = aggregate_units(&truth_units)?;
    let data = io::read_aggregated_csv(&args.data)?;

    let mut manifest = Manifest::new("evaluate", json!({}));
    manifest.record_input("data", &args.data)?;
    manifest.record_input("truth", &args.truth)?;

    let (label, estimate) = if let Some(path) = &args.model {
        manifest.record_input("model", path)?;
        let doc = io::read_model_json(path)?;
        let compiled = doc.compiled_design()?;
        (
            doc.method.clone(),
            reconstruct_overall(&doc.model, &compiled, &data)?,
        )
    } else {
        manifest.record_input("estimate", source)?;
        ("estimate".to_string(), io::read_table_csv(source)?)
    };

    let report = score(&estimate, &truth)?;
    let metrics = json!({
        "method": label,
        "max_abs_error": report.max_abs_error,
        "mean_abs_error": report.mean_abs_error,
        "signed_errors": report.signed_errors,
    });
    fs::write(dir.join("metrics.json"), format!("{metrics:#}\n"))?;
    manifest.record_output("metrics.json");
    manifest.write(&dir)?;
    println!(
        "{label}: max |error| = {:.4}, mean |error| = {:.4}",
        report.max_abs_error, report.mean_abs_error
    );
    println!("wrote {}", dir.display());
    Ok(dir)
}

pub fn report(args: &ReportArgs) -> Result<PathBuf> {
    let scenario = presets::by_name(&args.scenario, args.n_units, args.seed)?;
    let run_id = format!("report-{}-n{}-s{}", args.scenario, args.n_units, args.seed);
    let dir = ensure_dir(&args.out, &run_id)?;

    let mut options = fit_options_json(&args.opts);
    options["scenario"] = json!(args.scenario);
    options["n_units"] = json!(args.n_units);
    options["seed"] = json!(args.seed);
    options["adjust_margins"] = json!(args.adjust_margins);
    let mut manifest =
        Manifest::new("report", options).with_scenario(scenario.descriptor(), scenario.seed());

    let data = scenario.realize()?;
    let margins = write_dataset(&dir, &data, &mut manifest)?;
    let individual = aggregate_units(&data.units)?;
    let design = presets::matching_design(&args.scenario)?;
    let opts = optimizer_options(&args.opts);

    let mut columns: Vec<ComparisonColumn> = vec![];
    let mut metrics = BTreeMap::<String, serde_json::Value>::new();
    let push_method = |label: &str,
                       table: ProportionTable,
                       extra: serde_json::Value,
                       columns: &mut Vec<ComparisonColumn>,
                       metrics: &mut BTreeMap<String, serde_json::Value>|
     -> Result<ScoreReport> {
        let report = score(&table, &individual)?;
        let mut value = json!({
            "max_abs_error": report.max_abs_error,
            "mean_abs_error": report.mean_abs_error,
            "signed_errors": report.signed_errors,
        });
        if let Some(obj) = extra.as_object() {
            for (k, v) in obj {
                value[k] = v.clone();
            }
        }
        metrics.insert(label.to_string(), value);
        columns.push(ComparisonColumn {
            label: label.to_string(),
            table,
        });
        Ok(report)
    };

    // Individual-data logistic oracle (the "L" column).
    let oracle = fit_individual_logistic(&data.units, &design, &Default::default())?;
    let compiled = CompiledDesign::new(design.clone(), &margins)?;
    let oracle_overall = reconstruct_overall(&oracle.model, &compiled, &margins)?;
    push_method(
        "logistic",
        oracle_overall,
        json!({ "separation_warnings": oracle.separation_warnings }),
        &mut columns,
        &mut metrics,
    )?;

    // Ecological methods.
    let mut fitted_methods = vec![];
    for method in [Method::Goodman, Method::KingOls, Method::BpWls] {
        let fitted = fit_method(method, &margins, &design, &opts)?;
        push_method(
            &fitted.label.clone(),
            fitted.overall.clone(),
            fitted.metadata.clone(),
            &mut columns,
            &mut metrics,
        )?;
        fitted_methods.push(fitted);
    }
    for fitted in &fitted_methods {
        let name = format!("estimate-{}.csv", fitted.label);
        io::write_table_csv(dir.join(&name), fitted.overall.rows())?;
        manifest.record_output(&name);
        if let Some((model, compiled)) = &fitted.model {
            let doc = io::ModelDocument::new(&fitted.label, model, compiled);
            let name = format!("model-{}.json", fitted.label);
            io::write_model_json(dir.join(&name), &doc)?;
            manifest.record_output(&name);
        }
    }

    if args.adjust_margins {
        for k in 0..fitted_methods.len() {
            let fitted = &fitted_methods[k];
            let adjusted = adjusted_table(fitted, &margins, args.floor)?;
            let name = format!("estimate-{}-adjusted.csv", fitted.label);
            io::write_table_csv(dir.join(&name), adjusted.rows())?;
            manifest.record_output(&name);
            let label = format!("{}-adjusted", fitted.label);
            push_method(&label, adjusted, json!({}), &mut columns, &mut metrics)?;
        }
    }

    // Comparison artifacts.
    outputs::write_comparison(&dir.join("comparison.csv"), &individual, &columns)?;
    manifest.record_output("comparison.csv");
    fs::write(
        dir.join("metrics.json"),
        format!("{:#}\n", serde_json::to_value(&metrics)?),
    )?;
    manifest.record_output("metrics.json");

    // Diagnostics for plotting.
    let plots = dir.join("plots");
    fs::create_dir_all(&plots)?;
    let corr = lens::bias_correlation(&data.units)?;
    outputs::write_bias_correlation(&plots.join("bias-correlation.csv"), &corr)?;
    manifest.record_output("plots/bias-correlation.csv");
    let n_groups = 20.min(data.units.len());
    for row in 0..individual.n_rows() {
        let profile = lens::quantile_profile(&data.units, row, n_groups, individual.n_cols() - 1)?;
        let name = format!("profile-row{row}.csv");
        outputs::write_profile(&plots.join(&name), &profile)?;
        manifest.record_output(&format!("plots/{name}"));
    }
    if individual.n_rows() == 2 && individual.n_cols() == 2 {
        let geo = lens::two_by_two_geometry(&data.units)?;
        outputs::write_geometry(&plots.join("geometry.csv"), &geo)?;
        manifest.record_output("plots/geometry.csv");
    }

    manifest.write(&dir)?;
    let title = format!(
        "{} (N = {}, seed {})",
        args.scenario,
        data.units.len(),
        args.seed
    );
    print!(
        "{}",
        outputs::render_comparison(&title, &individual, &columns)
    );
    println!("wrote {}", dir.display());
    Ok(dir)
}

/// Re-exported for integration tests: maps units to their margins.
pub fn margins_of_units(units: &[UnitCounts]) -> Vec<UnitMargins> {
    units.iter().map(margins_of).collect()
}
