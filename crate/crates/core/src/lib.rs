//! Multiple-instance learning with instance-level attributions.
//!
//! The crate trains attention, transformer and Mamba-style MIL aggregators on
//! bags of instance feature vectors, explains their predictions per instance,
//! scores those explanations by patch flipping and compares explanation
//! methods across a cohort with rank statistics.

pub mod data;
pub mod error;
pub mod explainers;
pub mod faithfulness;
pub mod lrp;
pub mod models;
pub mod numeric;
pub mod stats;
pub mod training;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
