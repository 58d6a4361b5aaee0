// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coeffs;
pub mod dnmap;
pub mod error;
pub mod forward;
pub mod operator;
pub mod runge;
pub mod experiments;
pub mod invert;

pub use error::{Error, Result};
