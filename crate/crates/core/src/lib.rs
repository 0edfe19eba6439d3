#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod error;
pub mod hilbert;
pub mod io;
pub mod model;
pub mod observables;
pub mod propagator;
pub mod scenarios;

pub use error::{Error, Result};
