//! Conditional survival estimation from a generative model of
//! `(log observed time, censoring indicator)` given covariates.
//!
//! A Wasserstein critic with a gradient penalty trains a generator
//! `(eta, x) -> (time, score)`; Kaplan-Meier and Nelson-Aalen curves of its
//! samples estimate the conditional survival and cumulative hazard.

pub mod cli;
pub mod coxph;
pub mod error;
pub mod estimators;
pub mod networks;
pub mod pipeline;
pub mod simulation;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
