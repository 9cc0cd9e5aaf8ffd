//! Bayesian inference for the coefficients of 1D linear parabolic problems
//! observed through noisy sensors, with the Dirichlet boundary values treated
//! as unknowns.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod design;
pub mod error;
pub mod field_hyper;
pub mod forward_fd;
pub mod forward_fem;
pub mod likelihood;
pub mod model;
pub mod numerics;
pub mod posterior_scalar;
pub mod predictive;
pub mod synth_data;

pub use error::{Error, Result};
