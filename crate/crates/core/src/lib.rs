//! Simulated message-passing cluster with fault injection, and resilient
//! solvers and applications built on it.

// `!(x >= 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campaign;
pub mod error;
pub mod faults;
pub mod heat;
pub mod lflr;
pub mod linalg;
pub mod memory;
pub mod sim;
pub mod solvers;
pub mod time;

pub use error::{Error, Result};
pub use time::SimTime;
