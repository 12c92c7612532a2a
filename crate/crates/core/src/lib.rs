// `!(x > 0.0)` also rejects NaN, which is the point of those checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod biphoton;
pub mod coincidence;
pub mod config;
pub mod detection;
pub mod dispersion;
pub mod error;
pub mod export;
pub mod instrument;
pub mod quadrature;
pub mod scan;
pub mod toymodel;
pub mod units;

pub use error::{Error, Result};
