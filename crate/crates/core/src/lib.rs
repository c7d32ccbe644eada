//! Forecasting cognitive diagnosis (NL / MCI / dementia) from irregular
//! longitudinal clinical records.
//!
//! Records are ingested from CSV ([`ingest`]), expanded into supervised rows
//! by pairing every earlier examination with every later one ([`allpairs`]),
//! fed to a multilayer perceptron ([`model`]) and scored with the
//! Hand–Till multiclass AUC ([`metrics`]) under the protocols in [`eval`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allpairs;
pub mod cli;
pub mod cohort;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod report;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
