//! Command-line pipelines over the estimation library: generation,
//! fitting, margin adjustment, diagnostics, evaluation, and end-to-end
//! scenario reports.

pub mod args;
pub mod commands;
pub mod manifest;
pub mod outputs;

use ecotrans::Error;

pub use args::{Cli, Command};

/// Runs one parsed command.
pub fn run(cli: Cli) -> ecotrans::Result<()> {
    match &cli.command {
        Command::Generate(a) => commands::generate(a).map(|_| ()),
        Command::Fit(a) => commands::fit(a).map(|_| ()),
        Command::Adjust(a) => commands::adjust(a).map(|_| ()),
        Command::Diagnose(a) => commands::diagnose(a).map(|_| ()),
        Command::Evaluate(a) => commands::evaluate(a).map(|_| ()),
        Command::Report(a) => commands::report(a).map(|_| ()),
    }
}

/// Exit code classes: 2 validation, 3 convergence failure, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonConvergence { .. } | Error::IpfNoConvergence { .. } => 3,
        Error::Io(_) => 4,
        Error::Unit { source, .. } => exit_code(source),
        _ => 2,
    }
}

/// Short machine-readable tag for an error.
pub fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Validation(_) => "validation",
        Error::DimensionMismatch(_) => "dimension-mismatch",
        Error::EmptyRowMargin { .. } => "empty-row-margin",
        Error::Spec(_) => "spec",
        Error::InvalidPrecision(_) => "invalid-precision",
        Error::TooFewUnits { .. } => "too-few-units",
        Error::RankDeficient(_) => "rank-deficient",
        Error::MissingCovariate { .. } => "missing-covariate",
        Error::NonConvergence { .. } => "non-convergence",
        Error::SingularWeight { .. } => "singular-weight",
        Error::IpfNoConvergence { .. } => "ipf-no-convergence",
        Error::StructuralZero(_) => "structural-zero",
        Error::InsufficientVariation { .. } => "insufficient-variation",
        Error::InsufficientUnits { .. } => "insufficient-units",
        Error::DimensionError { .. } => "dimension-error",
        Error::Unit { source, .. } => error_kind(source),
        Error::Numeric(_) => "numeric",
        Error::Format { .. } => "format",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}
