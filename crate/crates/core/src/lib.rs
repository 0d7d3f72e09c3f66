//! Estimation of voter-transition tables from aggregated election data.
//!
//! Official election results come aggregated per polling station: the
//! margins of the station's transition table are known, its interior is
//! not. This crate bundles the standard ecological estimators of that
//! interior with the machinery needed to audit them:
//!
//! - [`tables`]: the data model and the aggregation identities.
//! - [`genesis`]: a synthetic generator with known individual-level truth.
//! - [`goodman`]: linear ecological regression with simplex bounds.
//! - [`logit`]: softmax transition models with covariates, fitted by
//!   ordinary or covariance-weighted least squares.
//! - [`seam`]: margin-matching adjustment by iterative proportional
//!   fitting.
//! - [`lens`]: ecological-bias diagnostics that use the individual data.
//! - [`verdict`]: reconstruction, the individual-data logistic oracle, and
//!   scoring against ground truth.
//! - [`io`]: the CSV and JSON formats shared with the command-line tool.

pub mod error;
pub mod genesis;
pub mod goodman;
pub mod io;
pub mod lens;
pub mod logit;
mod optim;
pub mod seam;
pub mod tables;
pub mod verdict;

pub use error::{Error, Result};
