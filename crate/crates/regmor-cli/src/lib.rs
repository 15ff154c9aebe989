//! Configuration, bundles and stage drivers behind the `regmor` binary.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod bundle;
pub mod commands;
pub mod config;
pub mod error;
