//! Library side of the `ddrm` command: config handling, restoration runs,
//! sweeps and the verification suite.

// `!(x >= 0)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod restore;
pub mod verify;
