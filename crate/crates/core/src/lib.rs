//! Preference learning and alignment across diverse annotator groups, on
//! finite feature worlds where every expectation is an exact sum.
//!
//! The crate covers the full pipeline: Bradley-Terry preference models over
//! linear rewards ([`world`]), synthetic multi-group annotator data
//! ([`synthpop`]), single and hard-EM mixture reward fitting ([`reward`]),
//! closed-form KL-regularized policies ([`policy`]), max-min alignment
//! ([`maxmin`]), numerical checks of the reward-mismatch and alignment-gap
//! lower bounds ([`analysis`]), a tabular navigation demo ([`gridworld`]),
//! and a file-based experiment driver ([`experiment`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod gridworld;
pub mod maxmin;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod synthpop;
pub mod world;

pub use error::{Error, Result};
