//! Deep evidential quantile regression.
//!
//! A network emits Normal-Inverse-Gamma parameters per quantile; the
//! marginal likelihood is a Student-t, and the same four numbers give the
//! quantile estimate together with aleatoric and epistemic uncertainty from
//! one deterministic forward pass. MC-dropout and deep-ensemble baselines
//! trained on the asymmetric-Laplace likelihood are included for comparison.

pub mod baselines;
pub mod data;
pub mod dist;
pub mod error;
pub mod evidential;
pub mod harness;
pub mod neural;
pub mod quadrature;
pub mod special;

pub use error::{Error, Result};
