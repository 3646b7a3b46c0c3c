//! Marginal causal odds ratios of a continuous exposure on an ordinal
//! longitudinal outcome observed at covariate-driven visit times.
//!
//! The estimator family fits a proportional-odds model of the outcome on the
//! exposure at visit records, weighted by a generalized inverse probability of
//! treatment weight (exposure models) divided by an inverse intensity of visit
//! weight (Andersen–Gill visit-rate model). [`estimators`] assembles the four
//! variants (unweighted, IPT-only, IIV-only, doubly weighted), [`simulator`]
//! reproduces the bias/variance study, and [`bootstrap`] provides cluster
//! bootstrap intervals.
//!
//! Identification relies on conditional exchangeability of the potential
//! outcomes given the confounders and the monitoring covariates, consistency,
//! and positivity of both the exposure density and the visit probability.
//! None of these are testable from data; they are preconditions of every
//! causal reading of the output.

pub mod bootstrap;
pub mod estimators;
pub mod gps;
pub mod intensity;
pub mod numopt;
pub mod panel;
pub mod pom;
pub mod rng;
pub mod simulator;
mod stats;

pub use bootstrap::{bootstrap_ci, cluster_resample, BootstrapResult};
pub use estimators::{
    estimate, estimate_all_four, Estimator, EstimatorResult, EstimatorSpec, IptKind, Roles,
};
pub use panel::{PanelDataset, PanelRecord, SubjectId};
pub use pom::{fit_pom, PomFit};
pub use simulator::{monte_carlo_target, run_study, simulate_dataset, ScenarioConfig};

/// Formats a float with 17 significant digits (round-trip exact for `f64`).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
