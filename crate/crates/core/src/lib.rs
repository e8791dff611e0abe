//! Simultaneous support recovery for multivariate multi-response linear
//! regression under block l1/l2 regularization.
//!
//! The crate is organized bottom-up: [`model`] holds the problem and
//! estimator types, [`datagen`] draws synthetic ensembles, [`solver`]
//! computes the estimator, [`theory`] evaluates the threshold quantities and
//! [`harness`] runs sample-size sweeps.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod config;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod solver;
pub mod theory;

pub use config::{ExperimentConfig, NGrid};
pub use datagen::{CoefficientModel, CovarianceModel, CovarianceSet, LambdaRule, SupportRule};
pub use error::{Error, Result};
pub use harness::{run_sweep, SweepResult, SweepRow};
pub use model::{CoefficientMatrix, GroundTruth, MvmrProblem, NoiseSpec, Role};
pub use solver::{solve, Method, SolveReport, SolverConfig};
