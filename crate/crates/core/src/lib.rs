//! Gaussian-process models for bounded wind-turbine power curves.
//!
//! Three models share one sparse variational engine ([`svgp`]): a
//! homoscedastic sparse GP ([`standard`]), a logit-warped heteroscedastic
//! GP ([`warped`]) and the heteroscedastic Beta process ([`hbp`]).

pub mod artifact;
pub mod cli;
pub mod data;
pub mod error;
pub mod exact_gp;
pub mod hbp;
pub mod kernels;
pub mod likelihoods;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod special;
pub mod standard;
pub mod svgp;
pub mod warped;

pub use error::{Error, Result};
