//! Bayesian network structure learning with the sparse candidate algorithm.
//!
//! The learning loop alternates between restricting each variable to a few
//! candidate parents ([`measures`]) and maximizing the score inside those
//! candidates, either greedily ([`search`]) or exactly ([`decompose`]).

pub mod cli;
pub mod dataset;
pub mod decompose;
pub mod error;
pub mod measures;
pub mod network;
pub mod scoring;
pub mod search;
pub mod sparse_candidate;

pub use error::{Error, Result};
