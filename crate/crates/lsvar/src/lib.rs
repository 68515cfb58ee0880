//! Change point detection for high-dimensional VAR(1) models whose transition
//! matrices decompose into a low-rank plus a sparse component.
//!
//! The crate provides:
//!
//! - [`var_model`]: piecewise VAR(1) models with low-rank plus sparse transition
//!   matrices, simulation, and structural checks;
//! - [`estimation`]: proximal-gradient solvers for the penalized least-squares
//!   problems (nuclear norm on the low-rank part, `l1` on the sparse part, and
//!   the weakly sparse lasso relaxation), plus the tuning-parameter schedules;
//! - [`single_detect`]: exhaustive search for a single change point over a
//!   restricted domain, exposing the full objective curve;
//! - [`multi_detect`]: the two-step rolling-window procedure with backward
//!   elimination screening, optional refinement, and a penalized
//!   dynamic-programming baseline;
//! - [`surrogate`]: the weakly sparse surrogate detection path and the combined
//!   surrogate/full strategy;
//! - [`evaluation`]: accuracy metrics and reproducible scenario generators for
//!   benchmarking;
//! - [`report`]: serializable detection reports and curve export.

pub mod error;
pub mod estimation;
pub mod linalg;
pub mod evaluation;
pub mod multi_detect;
pub mod report;
pub mod series;
pub mod single_detect;
pub mod surrogate;
pub mod var_model;

pub use error::Error;
pub use series::{Interval, TimeSeriesData};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
