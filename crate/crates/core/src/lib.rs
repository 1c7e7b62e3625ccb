//! Joint estimation of a per-unit valuation and behavioral-model parameters
//! from initial play in allocation games.
//!
//! The crate is organized bottom-up: [`games`] holds payoff and allocation
//! games, [`models`] predicts play, [`likelihood`] scores panel data,
//! [`estimation`] maximizes it, [`evaluation`] and [`simulate`] build the
//! experiment harness and [`cli`] drives everything from the command line.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod games;
pub mod likelihood;
pub mod models;
pub mod numeric;
pub mod optimize;
pub mod simulate;

pub use error::{Error, Result};
