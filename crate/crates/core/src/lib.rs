// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod markov;
mod par;
pub mod rng;
pub mod sbm;
pub mod tree;
pub mod variance;
pub mod walk_sim;

pub use error::{Error, Result};
pub use par::is_parallel;
