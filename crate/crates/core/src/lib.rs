//! Multilevel explanation trees for black-box tabular models.
//!
//! Local sparse linear explanations are fused along a prior graph by a
//! regularization path; the order in which explanations merge yields a tree
//! running from per-instance leaves to a single global explanation.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod neighborhood;
pub mod oracle;
pub mod pipeline;
pub mod solver;
pub mod tree;

pub use config::RunConfig;
pub use data::{Dataset, FeatureKind};
pub use error::{MameError, Result};
pub use oracle::Oracle;
