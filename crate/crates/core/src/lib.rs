#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod gains;
pub mod linalg;
pub mod modal_core;
pub mod plants;
pub mod sim_oracle;
pub mod synthesis;

pub use error::{Error, Result};
