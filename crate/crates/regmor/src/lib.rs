//! Registration-based model order reduction for two-dimensional domains.
//!
//! The crate is organised bottom-up: reference-domain geometry, high-order
//! meshes, displacement spaces, sensors, the registration optimizer, and the
//! reduction/regression stage used for online predictions.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod error;
pub mod femesh;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod quadrature;
pub mod reduction;
pub mod registration;
pub mod sensor;
pub mod spaces;
pub mod synthetic;

pub use error::{Error, Result};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;
