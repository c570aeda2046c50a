//! Travel-survey driven forecasting of EV trips and simulation of the
//! resulting daily charging demand.
//!
//! The pipeline is split into stages that mirror the modules below:
//!
//! * [`ingest`] parses vehicle/trip survey files and isolates EV trips.
//! * [`chain`] orders trips into per-person or per-vehicle chains and
//!   derives supervised (current trip, next trip) rows.
//! * [`preprocess`] holds train/test splitting, feature scaling and the
//!   evaluation metrics.
//! * [`models`] contains the from-scratch regressors (KNN, regression tree,
//!   random forest, MLP) and the per-target training suite.
//! * [`sim`] runs the state-of-charge recursion and aggregates charging
//!   events into a time-of-day demand profile.
//! * [`pipeline`] wires the stages together behind a [`config::RunConfig`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod config;
pub mod error;
pub mod ingest;
pub mod models;
pub mod pipeline;
pub mod preprocess;
pub mod seed;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
