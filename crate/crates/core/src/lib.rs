#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evalstats;
pub mod globopt;
pub mod lsq;
pub mod model;
pub mod pipeline;
pub mod varpro;

pub use error::{Error, Result};
