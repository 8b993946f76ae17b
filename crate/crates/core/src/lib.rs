//! Effective population size trajectories from dated genealogies.
//!
//! The pipeline is: a [`genealogy::Genealogy`] (parsed from Newick or simulated)
//! is cut by a regular [`grid::Grid`] into a [`grid::SubintervalPartition`], on
//! which the piecewise-constant coalescent likelihood is evaluated. A GMRF or
//! horseshoe Markov random field prior is placed on the log effective
//! population sizes and the posterior is explored with an
//! elliptical-slice-within-Gibbs sampler.

// Negated comparisons reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod coalescent;
pub mod error;
pub mod evaluate;
pub mod field_priors;
pub mod genealogy;
pub mod grid;
pub mod rng;
pub mod samplers;
pub mod simulate;
pub mod stats;
pub mod study;

pub use error::{Error, Result};
