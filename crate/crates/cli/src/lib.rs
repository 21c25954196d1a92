//! Command-line front end: configuration, expressions and command runners.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod expr;
pub mod run;
