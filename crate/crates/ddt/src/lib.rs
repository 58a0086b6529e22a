//! Interpretable reward learning from pairwise trajectory preferences using
//! differentiable decision trees, with downstream policy optimization and
//! interpretability reporting.

pub mod data;
pub mod env;
pub mod error;
pub mod interpret;
pub mod policy;
pub mod prefs;
pub mod train;
pub mod tree;

pub use error::{DdtError, Result};
