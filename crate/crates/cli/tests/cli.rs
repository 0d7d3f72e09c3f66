//! End-to-end behavior of the command-line tool: file round trips,
//! validation failures with the right exit codes, and pipeline wiring.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecotrans"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr_json(output: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&output.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr not JSON: {text}"))
}

#[test]
fn generate_fit_evaluate_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "generate",
            "--scenario",
            "diagonal-covariate",
            "--n-units",
            "300",
            "--seed",
            "5",
            "--out",
            "gen",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let gen = tmp.path().join("gen");
    assert!(gen.join("individual.csv").is_file());
    assert!(gen.join("aggregated.csv").is_file());
    assert!(gen.join("manifest.json").is_file());

    // Fit Goodman on the aggregated file.
    let out = run(
        &[
            "fit",
            "--data",
            "gen/aggregated.csv",
            "--method",
            "goodman",
            "--out",
            "fit-g",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let est = tmp.path().join("fit-g/estimate-goodman.csv");
    assert!(est.is_file());

    // Evaluate it against the individual truth: the diagonal preset makes
    // Goodman fail, which the metrics must show.
    let out = run(
        &[
            "evaluate",
            "--estimate",
            "fit-g/estimate-goodman.csv",
            "--data",
            "gen/aggregated.csv",
            "--truth",
            "gen/individual.csv",
            "--out",
            "eval",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("eval/metrics.json")).unwrap())
            .unwrap();
    assert!(metrics["max_abs_error"].as_f64().unwrap() > 0.05);

    // Fit the matching covariate model and evaluate the model document.
    let design = r#"{"entries":[
        {"cell":[0,0],"source":"row_margin:0","transform":"centered"},
        {"cell":[1,1],"source":"row_margin:1","transform":"centered"},
        {"cell":[2,2],"source":"row_margin:2","transform":"centered"}
    ]}"#;
    fs::write(tmp.path().join("design.json"), design).unwrap();
    let out = run(
        &[
            "fit",
            "--data",
            "gen/aggregated.csv",
            "--method",
            "king-ols",
            "--design",
            "design.json",
            "--out",
            "fit-k",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = run(
        &[
            "evaluate",
            "--model",
            "fit-k/model-king-ols.json",
            "--data",
            "gen/aggregated.csv",
            "--truth",
            "gen/individual.csv",
            "--out",
            "eval-k",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("eval-k/metrics.json")).unwrap())
            .unwrap();
    // The covariate model tracks the truth far better than Goodman here.
    assert!(metrics["max_abs_error"].as_f64().unwrap() < 0.05);
}

#[test]
fn mismatched_dimensions_give_validation_exit() {
    let tmp = tempfile::tempdir().unwrap();
    // 3x3 estimate against 2x2 margins.
    fs::write(
        tmp.path().join("estimate.csv"),
        "0.5,0.3,0.2\n0.2,0.5,0.3\n0.1,0.2,0.7\n",
    )
    .unwrap();
    fs::write(
        tmp.path().join("aggregated.csv"),
        "unit_id,x_0,x_1,y_0,y_1\na,40,60,50,50\nb,70,30,55,45\n",
    )
    .unwrap();
    let out = run(
        &[
            "adjust",
            "--estimate",
            "estimate.csv",
            "--data",
            "aggregated.csv",
            "--out",
            "adj",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "dimension-mismatch");
    let message = err["error"]["message"].as_str().unwrap();
    assert!(
        message.contains("3x3") && message.contains("2x2"),
        "{message}"
    );
}

#[test]
fn malformed_csv_names_the_offending_line() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("aggregated.csv"),
        "unit_id,x_0,x_1,y_0,y_1\na,40,60,50,50\nb,40,sixty,50,50\n",
    )
    .unwrap();
    let out = run(
        &["fit", "--data", "aggregated.csv", "--method", "goodman"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    let message = err["error"]["message"].as_str().unwrap();
    assert!(message.contains("line 3"), "{message}");
    assert!(message.contains("x_1"), "{message}");
}

#[test]
fn diagnose_requires_individual_data() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("aggregated.csv"),
        "unit_id,x_0,x_1,y_0,y_1\na,40,60,50,50\n",
    )
    .unwrap();
    let out = run(
        &["diagnose", "--data", "aggregated.csv", "--bias-corr"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    let message = err["error"]["message"].as_str().unwrap();
    assert!(message.contains("aggregated data"), "{message}");
    assert!(message.contains("oracle"), "{message}");
}

#[test]
fn diagnose_writes_tidy_series() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &["generate", "--scenario", "fig1a", "--out", "gen"],
        tmp.path(),
    );
    assert!(out.status.success());
    let out = run(
        &[
            "diagnose",
            "--data",
            "gen/individual.csv",
            "--bias-corr",
            "--geometry",
            "--profile",
            "row=1",
            "--groups",
            "2",
            "--out",
            "diag",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["bias-correlation.csv", "geometry.csv", "profile-row1.csv"] {
        let content = fs::read_to_string(tmp.path().join("diag").join(name)).unwrap();
        assert!(content.starts_with("series,x,y\n"), "{name}: {content}");
        assert!(content.lines().count() > 1, "{name} has no data rows");
    }
    let geometry = fs::read_to_string(tmp.path().join("diag/geometry.csv")).unwrap();
    assert!(geometry.contains("regression,"));
    assert!(geometry.contains("overall,"));
}

#[test]
fn generate_round_trip_is_lossless() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "generate",
            "--scenario",
            "mixture",
            "--n-units",
            "60",
            "--seed",
            "9",
            "--out",
            "gen",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    // The margins derived from individual.csv equal aggregated.csv exactly.
    let units = ecotrans::io::read_individual_csv(tmp.path().join("gen/individual.csv")).unwrap();
    let margins = ecotrans::io::read_aggregated_csv(tmp.path().join("gen/aggregated.csv")).unwrap();
    assert_eq!(units.len(), margins.len());
    for (u, m) in units.iter().zip(&margins) {
        let derived = ecotrans::tables::margins_of(u);
        assert_eq!(&derived, m);
    }
    // Latent tallies exist for the mixture scenario and sum to the counts.
    let latent = fs::read_to_string(tmp.path().join("gen/latent.csv")).unwrap();
    assert!(latent.starts_with("unit_id,level,row_index,col_index,count\n"));
}

#[test]
fn unknown_scenario_is_rejected_with_choices() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["report", "--scenario", "bogus"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    let message = err["error"]["message"].as_str().unwrap();
    assert!(message.contains("bogus"));
    assert!(message.contains("diagonal-covariate"));
}

#[test]
fn spec_file_generation_honors_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = r#"{
        "n_units": 20,
        "seed": 1,
        "size_law": {"law": "uniform", "min": 100, "max": 200},
        "margin_law": {"law": "dirichlet", "alpha": [3.0, 3.0]},
        "base_table": [[0.7, 0.3], [0.2, 0.8]],
        "dispersion": 150.0
    }"#;
    fs::write(tmp.path().join("spec.json"), spec).unwrap();
    for (seed, dir) in [("1", "a"), ("2", "b"), ("1", "c")] {
        let out = run(
            &[
                "generate",
                "--spec",
                "spec.json",
                "--seed",
                seed,
                "--out",
                dir,
            ],
            tmp.path(),
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let a = fs::read(tmp.path().join("a/individual.csv")).unwrap();
    let b = fs::read(tmp.path().join("b/individual.csv")).unwrap();
    let c = fs::read(tmp.path().join("c/individual.csv")).unwrap();
    assert_ne!(a, b, "different seeds must change the data");
    assert_eq!(a, c, "same seed must reproduce the data");
}

#[test]
fn report_adjust_margins_emits_adjusted_estimates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "report",
            "--scenario",
            "constant",
            "--n-units",
            "200",
            "--seed",
            "2",
            "--adjust-margins",
            "--out",
            "rep",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = tmp.path().join("rep");
    for name in [
        "estimate-goodman-adjusted.csv",
        "estimate-king-ols-adjusted.csv",
        "estimate-bp-wls-adjusted.csv",
        "comparison.csv",
        "metrics.json",
    ] {
        assert!(dir.join(name).is_file(), "missing {name}");
    }
    let comparison = fs::read_to_string(dir.join("comparison.csv")).unwrap();
    let header = comparison.lines().next().unwrap();
    assert_eq!(
        header,
        "row,col,individual,logistic,goodman,king_ols,bp_wls,goodman_adjusted,king_ols_adjusted,bp_wls_adjusted"
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("cell"));
    assert!(stdout.contains("king-ols"));
}
