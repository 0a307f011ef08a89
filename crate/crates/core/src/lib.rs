#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cells;
pub mod data;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod harness;
pub mod heads;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod params;

pub use error::{Error, Result};
pub use exec::Execution;
