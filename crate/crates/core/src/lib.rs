//! Bayesian joint modelling of a longitudinal biomarker and a time-to-event
//! outcome linked through a shared random intercept.
//!
//! The crate covers the full pipeline: cohort simulation, MCMC fitting of the
//! joint model and of a two-stage comparator, dynamic survival prediction, and
//! predictive-accuracy evaluation.

pub mod config;
pub mod dynpred;
pub mod io;
pub mod mcmc;
pub mod metrics;
pub mod model;
pub mod simulate;
pub mod study;
pub mod two_stage;

pub use model::{Cohort, HazardSpec, JointParams, ModelError, PatientRecord, PriorSpec};
